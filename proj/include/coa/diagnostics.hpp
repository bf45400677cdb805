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

// Self-checks shared by the CLI and the acceptance run: finite-difference
// gradients of every primitive and of the policy loss, and decoder
// causality under input perturbation.

#ifndef COA_DIAGNOSTICS_HPP_
#define COA_DIAGNOSTICS_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace coa::diag {

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0.0;
};

// One row per primitive input, then one per policy parameter for both loss
// variants (tiny config, 3 chain tokens, dropout off).
std::vector<GradCheckRow> gradient_suite(std::uint64_t seed = 0);

struct CausalityReport {
  bool ok = true;
  std::size_t cases = 0;   // (ordering, position) pairs checked
  std::string detail;      // first violation
};

// Tiny config with L = 6: perturbing decoder input j must leave every
// output row < j (trunk, all MTP heads, actions, stop) bit-identical.
CausalityReport causality_suite();

}  // namespace coa::diag

#endif  // COA_DIAGNOSTICS_HPP_
