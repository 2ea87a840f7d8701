#pragma once

// Umbrella header for the megc library.

#include "megc/autodiff.hpp"
#include "megc/checkpoint.hpp"
#include "megc/config.hpp"
#include "megc/core.hpp"
#include "megc/corpus.hpp"
#include "megc/cue_synthesis.hpp"
#include "megc/evaluator.hpp"
#include "megc/fft.hpp"
#include "megc/image.hpp"
#include "megc/image_io.hpp"
#include "megc/megc_net.hpp"
#include "megc/moire_estimator.hpp"
#include "megc/nn.hpp"
#include "megc/objectives.hpp"
#include "megc/pipeline.hpp"
#include "megc/tensor.hpp"
#include "megc/toy_corpus.hpp"
#include "megc/trainer.hpp"
