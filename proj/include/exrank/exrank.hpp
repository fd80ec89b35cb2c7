#pragma once

#include "alternating.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "contrastive.hpp"
#include "corpus.hpp"
#include "eval.hpp"
#include "optim.hpp"
#include "retriever.hpp"
#include "rng.hpp"
#include "scorer.hpp"
#include "synthetic.hpp"
#include "template.hpp"
#include "tokenizer.hpp"
