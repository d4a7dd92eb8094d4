#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace simeval {

/// Entry point of the `simeval` command. Returns the process exit code:
/// 0 on success, 2 for usage errors, 1 for everything else with one
/// `error: {"code": ..., "message": ...}` line on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace simeval
