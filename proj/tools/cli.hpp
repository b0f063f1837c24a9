#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace sinlg::cli {

// Runs one command line (without the program name). Reports go to `out`,
// diagnostics and usage text to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// A config given as a JSON object or as key=value pairs separated by newlines
// or commas. Lines starting with '#' are ignored.
nlohmann::json parse_config_text(const std::string& text);

// Reads `spec` as a file when one exists at that path, inline text otherwise.
nlohmann::json load_config(const std::string& spec);

}  // namespace sinlg::cli
