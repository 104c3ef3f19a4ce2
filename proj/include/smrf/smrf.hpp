/*
* smrf - myocardial segmentation with shape model guided random forests.
*
* Copyright 2026 The smrf authors.
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*     http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
*/

#pragma once

#include "smrf/config.hpp"
#include "smrf/error.hpp"
#include "smrf/eval.hpp"
#include "smrf/features.hpp"
#include "smrf/fitting.hpp"
#include "smrf/forest.hpp"
#include "smrf/geometry.hpp"
#include "smrf/image.hpp"
#include "smrf/io.hpp"
#include "smrf/metrics.hpp"
#include "smrf/parallel.hpp"
#include "smrf/random.hpp"
#include "smrf/shape_model.hpp"
#include "smrf/synth.hpp"
