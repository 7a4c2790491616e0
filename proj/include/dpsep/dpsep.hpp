// Copyright 2026 The dpsep Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "dpsep/checkpoint.hpp"
#include "dpsep/commands.hpp"
#include "dpsep/config.hpp"
#include "dpsep/data.hpp"
#include "dpsep/dualpath.hpp"
#include "dpsep/error.hpp"
#include "dpsep/gradcheck.hpp"
#include "dpsep/init.hpp"
#include "dpsep/lstm.hpp"
#include "dpsep/ops.hpp"
#include "dpsep/tasnet.hpp"
#include "dpsep/tensor.hpp"
#include "dpsep/training.hpp"
#include "dpsep/wav.hpp"
