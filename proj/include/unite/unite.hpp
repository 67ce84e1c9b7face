// Umbrella header.
#pragma once

#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "corpus.hpp"
#include "evalcorr.hpp"
#include "gradcheck.hpp"
#include "labeling.hpp"
#include "model.hpp"
#include "mra.hpp"
#include "packing.hpp"
#include "pipeline.hpp"
#include "tensor.hpp"
#include "toy.hpp"
#include "training.hpp"
