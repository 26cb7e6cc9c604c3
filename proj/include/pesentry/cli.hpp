// pesentry - static PE malware/ransomware detection toolkit
// Command-line front end. Exit codes: 0 success, 2 partial failure, 1 fatal.
// Fatal errors print one JSON line {"error": <code>, "message": ...} on stderr.

#pragma once

#include <ostream>

namespace pesentry {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace pesentry
