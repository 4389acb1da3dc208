/*
 * Copyright 2026 The birdclef-baseline Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "birdclef/audio_io.hpp"
#include "birdclef/config.hpp"
#include "birdclef/dataset.hpp"
#include "birdclef/error.hpp"
#include "birdclef/inference.hpp"
#include "birdclef/model.hpp"
#include "birdclef/nn/layers.hpp"
#include "birdclef/nn/ops.hpp"
#include "birdclef/nn/optim.hpp"
#include "birdclef/nn/tensor.hpp"
#include "birdclef/runtime.hpp"
#include "birdclef/signal_filter.hpp"
#include "birdclef/spectrogram.hpp"
#include "birdclef/synth_corpus.hpp"
#include "birdclef/training.hpp"
