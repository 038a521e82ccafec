#pragma once

// Umbrella header.

#include "cdrest/core/autograd.hpp"
#include "cdrest/core/hash.hpp"
#include "cdrest/core/layers.hpp"
#include "cdrest/core/ops_basic.hpp"
#include "cdrest/core/ops_fft.hpp"
#include "cdrest/core/ops_nn.hpp"
#include "cdrest/core/rng.hpp"
#include "cdrest/core/serialize.hpp"
#include "cdrest/core/tensor.hpp"
#include "cdrest/conditioning/token_encoder.hpp"
#include "cdrest/harness/eval.hpp"
#include "cdrest/harness/metrics.hpp"
#include "cdrest/harness/pipeline.hpp"
#include "cdrest/harness/train.hpp"
#include "cdrest/objectives/losses.hpp"
#include "cdrest/perception/losses.hpp"
#include "cdrest/perception/model.hpp"
#include "cdrest/perception/train.hpp"
#include "cdrest/restoration/blocks.hpp"
#include "cdrest/restoration/config.hpp"
#include "cdrest/restoration/net.hpp"
#include "cdrest/synth/catalog.hpp"
#include "cdrest/synth/dataset.hpp"
#include "cdrest/synth/degrade.hpp"
#include "cdrest/synth/factors.hpp"
#include "cdrest/synth/image.hpp"
