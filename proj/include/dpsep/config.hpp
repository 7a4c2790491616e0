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

// Run configuration: flat `key = value` lines, `#` starts a comment.
// Unknown keys and repeated keys are errors.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "dpsep/tasnet.hpp"
#include "dpsep/training.hpp"

namespace dpsep {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string manifest;        // records tagged train/valid/test
  std::string run_dir = "run";
  std::size_t threads = 1;
  bool check_finite = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t config_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return std::size_t(x);
}

inline double config_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(x)) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return x;
}

inline bool config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

// Relative paths in the text resolve against base_dir.
inline RunConfig parse_config(const std::string& text, const std::string& base_dir = "") {
  RunConfig c;
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    return p.lexically_normal().string();
  };
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size_key = [](std::size_t& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) {
      field = detail::config_size(k, v);
    };
  };
  auto double_key = [](double& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) {
      field = detail::config_double(k, v);
    };
  };
  const std::map<std::string, Setter> setters{
      {"N", size_key(c.model.num_filters)},
      {"W", size_key(c.model.window)},
      {"C", size_key(c.model.num_sources)},
      {"B", size_key(c.model.num_blocks)},
      {"H", size_key(c.model.hidden)},
      {"K", size_key(c.model.chunk_len)},
      {"sample_rate", size_key(c.model.sample_rate)},
      {"ln_epsilon", double_key(c.model.ln_epsilon)},
      {"epochs", size_key(c.train.epochs)},
      {"segment_seconds", double_key(c.train.segment_seconds)},
      {"lr", double_key(c.train.lr_init)},
      {"lr_decay", double_key(c.train.lr_decay)},
      {"lr_decay_every", size_key(c.train.lr_decay_every)},
      {"clip_norm", double_key(c.train.clip_norm)},
      {"patience", size_key(c.train.patience)},
      {"batch_size", size_key(c.train.batch_size)},
      {"max_steps", size_key(c.train.max_steps)},
      {"adam_beta1", double_key(c.train.adam.beta1)},
      {"adam_beta2", double_key(c.train.adam.beta2)},
      {"adam_epsilon", double_key(c.train.adam.epsilon)},
      {"seed", [&](const std::string& k, const std::string& v) {
         c.train.seed = detail::config_size(k, v);
       }},
      {"deterministic", [&](const std::string& k, const std::string& v) {
         c.train.deterministic = detail::config_bool(k, v);
       }},
      {"check_finite", [&](const std::string& k, const std::string& v) {
         c.check_finite = detail::config_bool(k, v);
       }},
      {"threads", size_key(c.threads)},
      {"manifest", [&](const std::string&, const std::string& v) { c.manifest = path(v); }},
      {"run_dir", [&](const std::string&, const std::string& v) { c.run_dir = path(v); }},
  };
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(detail::concat("config line ", line_no, ": expected key = value"));
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError(detail::concat("config line ", line_no, ": unknown key '", key, "'"));
    }
    if (auto [pos, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError(detail::concat("config line ", line_no, ": key '", key,
                                       "' already set on line ", pos->second));
    }
    try {
      it->second(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(detail::concat("config line ", line_no, ": ", e.what()));
    }
  }
  if (c.threads == 0) throw ConfigError("threads must be at least 1");
  c.model.validate();
  c.train.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

}  // namespace dpsep
