#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace mlhg::cli {

// Entry point behind the mlhg binary. Returns 0 on success, 1 on runtime
// failure, 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
inline int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

}  // namespace mlhg::cli
