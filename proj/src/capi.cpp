// Copyright 2026 The coa Authors
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

#include "coa/coa.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <sstream>
#include <string>

#include "toml.hpp"

#include "coa/error.hpp"
#include "coa/pipeline.hpp"

struct coa_config {
  coa::config::RunConfig cfg;
};

struct coa_policy {
  coa::train::TrainState state;
};

namespace {

thread_local std::string g_last_error;

coa_status status_of(coa::ErrorKind k) {
  switch (k) {
    case coa::ErrorKind::kShape: return COA_ERR_SHAPE;
    case coa::ErrorKind::kNonFinite: return COA_ERR_NON_FINITE;
    case coa::ErrorKind::kDomain: return COA_ERR_DOMAIN;
    case coa::ErrorKind::kIo: return COA_ERR_IO;
    case coa::ErrorKind::kFormat: return COA_ERR_FORMAT;
    case coa::ErrorKind::kChecksum: return COA_ERR_CHECKSUM;
    case coa::ErrorKind::kConfig: return COA_ERR_CONFIG;
  }
  return COA_ERR_INTERNAL;
}

coa_status invalid(const char* what) {
  g_last_error = what;
  return COA_ERR_INVALID_ARGUMENT;
}

// Runs f, turning every exception into a status and a message.
template <typename F>
coa_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return COA_OK;
  } catch (const coa::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown exception";
  }
  return COA_ERR_INTERNAL;
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

coa::pipeline::Log logger(coa_log_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

}  // namespace

extern "C" {

const char* coa_version(void) { return COA_VERSION; }

const char* coa_last_error(void) { return g_last_error.c_str(); }

const char* coa_status_name(coa_status s) {
  switch (s) {
    case COA_OK: return "ok";
    case COA_ERR_SHAPE: return "shape";
    case COA_ERR_NON_FINITE: return "non_finite";
    case COA_ERR_DOMAIN: return "domain";
    case COA_ERR_IO: return "io";
    case COA_ERR_FORMAT: return "format";
    case COA_ERR_CHECKSUM: return "checksum";
    case COA_ERR_CONFIG: return "config";
    case COA_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case COA_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void coa_string_free(char* s) { std::free(s); }

coa_status coa_config_load(const char* path, const char* const* overrides,
                           size_t n_overrides, coa_config** out) {
  if (!out) return invalid("coa_config_load: out is null");
  if (n_overrides && !overrides) return invalid("coa_config_load: overrides is null");
  *out = nullptr;
  return guarded([&] {
    std::vector<std::pair<std::string, std::string>> kv;
    for (size_t i = 0; i < n_overrides; ++i) {
      const std::string s = overrides[i] ? overrides[i] : "";
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) {
        coa::fail(coa::ErrorKind::kConfig,
                  "config: override '" + s + "' is not key=value");
      }
      kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    std::optional<std::filesystem::path> file;
    if (path) file = path;
    auto c = std::make_unique<coa_config>();
    c->cfg = coa::config::load_config(file, kv);
    *out = c.release();
  });
}

void coa_config_free(coa_config* c) { delete c; }

coa_status coa_config_to_toml(const coa_config* c, char** out) {
  if (!c || !out) return invalid("coa_config_to_toml: null argument");
  return guarded([&] { *out = dup(coa::config::to_toml(c->cfg)); });
}

coa_status coa_config_get(const coa_config* c, const char* key, char** out) {
  if (!c || !key || !out) return invalid("coa_config_get: null argument");
  return guarded([&] {
    const auto tbl = toml::parse(coa::config::to_toml(c->cfg));
    const auto node = tbl.at_path(key);
    if (!node || node.is_table()) {
      coa::fail(coa::ErrorKind::kConfig, std::string("config: unknown key '") + key + "'");
    }
    std::ostringstream os;
    node.visit([&](const auto& v) {
      if constexpr (toml::is_string<decltype(v)>) {
        os << v.get();
      } else {
        os << v;
      }
    });
    *out = dup(os.str());
  });
}

coa_status coa_gen_data(const coa_config* c, const char* out, char** dataset_path) {
  if (!c || !out) return invalid("coa_gen_data: null argument");
  return guarded([&] {
    const auto r = coa::pipeline::gen_data(c->cfg, out);
    if (dataset_path) *dataset_path = dup(r.dataset.string());
  });
}

coa_status coa_train(const coa_config* c, const char* dataset, const char* out,
                     coa_log_fn log, void* user, char** checkpoint_path) {
  if (!c || !dataset || !out) return invalid("coa_train: null argument");
  return guarded([&] {
    const auto r = coa::pipeline::train_run(c->cfg, dataset, out, logger(log, user));
    if (checkpoint_path) *checkpoint_path = dup(r.checkpoint.string());
  });
}

coa_status coa_eval(const coa_config* c, const char* checkpoint, const char* out,
                    double* success_rate) {
  if (!c || !checkpoint || !out) return invalid("coa_eval: null argument");
  return guarded([&] {
    const auto r = coa::pipeline::eval_run(c->cfg, checkpoint, out);
    if (success_rate) *success_rate = r.success_rate;
  });
}

coa_status coa_ablate(const coa_config* c, const char* out, coa_log_fn log,
                      void* user) {
  if (!c || !out) return invalid("coa_ablate: null argument");
  return guarded([&] { coa::pipeline::ablate_run(c->cfg, out, logger(log, user)); });
}

coa_status coa_analyze(const coa_config* c, const char* out, coa_log_fn log,
                       void* user) {
  if (!c || !out) return invalid("coa_analyze: null argument");
  return guarded([&] { coa::pipeline::analyze_run(c->cfg, out, logger(log, user)); });
}

coa_status coa_attn_dump(const coa_config* c, const char* checkpoint,
                         const char* out) {
  if (!c || !checkpoint || !out) return invalid("coa_attn_dump: null argument");
  return guarded([&] { coa::pipeline::attn_dump(c->cfg, checkpoint, out); });
}

coa_status coa_grad_check(uint64_t seed, int* all_pass, char** report) {
  if (!all_pass) return invalid("coa_grad_check: all_pass is null");
  return guarded([&] {
    std::ostringstream os;
    *all_pass = coa::pipeline::grad_check(seed, os) ? 1 : 0;
    if (report) *report = dup(os.str());
  });
}

coa_status coa_policy_load(const char* checkpoint, coa_policy** out) {
  if (!checkpoint || !out) return invalid("coa_policy_load: null argument");
  *out = nullptr;
  return guarded([&] {
    auto p = std::make_unique<coa_policy>(coa_policy{coa::train::load_checkpoint(
        coa::pipeline::resolve_checkpoint(checkpoint))});
    *out = p.release();
  });
}

void coa_policy_free(coa_policy* p) { delete p; }

coa_status coa_policy_rollout(const coa_policy* p, uint64_t seed, int* success,
                              size_t* length) {
  if (!p) return invalid("coa_policy_rollout: policy is null");
  return guarded([&] {
    const auto& s = p->state;
    const auto r = coa::exec::rollout_episode(
        s.policy, s.stats, coa::sim::TaskSpec::make(s.info.task, s.info.spread), seed);
    if (!r.error.empty()) coa::fail(coa::ErrorKind::kDomain, r.error);
    if (success) *success = r.success ? 1 : 0;
    if (length) *length = r.length;
  });
}

}  // extern "C"
