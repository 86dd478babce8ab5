// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

namespace fineformer {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitNumerical = 2 };

/// Entry point of the `fineformer` executable:
///   fineformer <gen-data|train|eval|gradcheck|attn-report> --config PATH [--set key=value ...] [--out DIR]
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fineformer
