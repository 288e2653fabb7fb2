#pragma once

// Umbrella header for the pvqe library.

#include "pvqe/adam.hpp"
#include "pvqe/autodiff.hpp"
#include "pvqe/bench.hpp"
#include "pvqe/common.hpp"
#include "pvqe/dsp.hpp"
#include "pvqe/enrollment.hpp"
#include "pvqe/gradcheck.hpp"
#include "pvqe/graph.hpp"
#include "pvqe/kernels.hpp"
#include "pvqe/loss.hpp"
#include "pvqe/metrics.hpp"
#include "pvqe/model.hpp"
#include "pvqe/ops.hpp"
#include "pvqe/stream.hpp"
#include "pvqe/synth.hpp"
#include "pvqe/tensor.hpp"
#include "pvqe/trainer.hpp"
#include "pvqe/wav.hpp"
#include "pvqe/weights_io.hpp"
