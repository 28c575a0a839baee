#pragma once

#include "rsknet/accounting.hpp"
#include "rsknet/backbone.hpp"
#include "rsknet/config.hpp"
#include "rsknet/container.hpp"
#include "rsknet/dataset.hpp"
#include "rsknet/frontend.hpp"
#include "rsknet/grad_check.hpp"
#include "rsknet/grad_suite.hpp"
#include "rsknet/scoring.hpp"
#include "rsknet/toy_corpus.hpp"
#include "rsknet/trainer.hpp"
