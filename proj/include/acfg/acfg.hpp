// Copyright 2026 The acfg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "acfg/count_model.hpp"
#include "acfg/decoder.hpp"
#include "acfg/guidance.hpp"
#include "acfg/harness.hpp"
#include "acfg/mock_model.hpp"
#include "acfg/model.hpp"
#include "acfg/remote_model.hpp"
#include "acfg/tasks.hpp"
#include "acfg/trace.hpp"
#include "acfg/types.hpp"
