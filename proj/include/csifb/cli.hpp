/**
 * @file cli.hpp
 * @brief The csifb command line: gen-data, train, eval, sweep-snr,
 * sweep-rate, encode and decode.
 */
#pragma once

#include <ostream>

namespace csifb::cli {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

/// Parses argv (argv[0] is the program name), runs one subcommand and maps
/// failures to exit codes: usage 2, data 3, numeric 4.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace csifb::cli
