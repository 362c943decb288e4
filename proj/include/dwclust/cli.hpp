#ifndef DWCLUST_CLI_HPP
#define DWCLUST_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace dwclust {

// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dwclust

#endif  // DWCLUST_CLI_HPP
