#pragma once

#include <string>

#include "d3/config.hpp"

namespace d3 {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3 };
void set_log_level(LogLevel lv);
bool parse_log_level(const std::string& name, LogLevel& out);
void logf(LogLevel lv, const std::string& msg);  // stderr only, never an artifact

// Commands return 0 on success and throw on failure; main() maps exception
// types to exit codes (ConfigError 2, DivergenceError 3, IoError 4).
int cmd_run(const ExperimentConfig& c);
int cmd_sweep(const ExperimentConfig& c);
int cmd_estimate(const std::string& fit_path, double d_star, const std::string& out_dir);
int cmd_verify_linear(const ExperimentConfig& c);
int cmd_check_theorem(const ExperimentConfig& c);

}  // namespace d3
