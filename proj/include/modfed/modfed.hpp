/*
 * Copyright 2026 The modfed Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Umbrella header for the library (the CLI layer lives in modfed/cli.hpp).

#include "modfed/analysis_bounds.hpp"
#include "modfed/core_model.hpp"
#include "modfed/errors.hpp"
#include "modfed/estimators.hpp"
#include "modfed/modulation.hpp"
#include "modfed/parallel.hpp"
#include "modfed/privacy_accounting.hpp"
#include "modfed/rng.hpp"
#include "modfed/server_protocol.hpp"
#include "modfed/simulator.hpp"
#include "modfed/validators.hpp"
