#pragma once

#include "hiercl/analysis.hpp"
#include "hiercl/data.hpp"
#include "hiercl/encoder.hpp"
#include "hiercl/error.hpp"
#include "hiercl/format.hpp"
#include "hiercl/loss.hpp"
#include "hiercl/matrix.hpp"
#include "hiercl/retrieval.hpp"
#include "hiercl/rng.hpp"
#include "hiercl/sampler.hpp"
#include "hiercl/taxonomy.hpp"
#include "hiercl/train.hpp"
