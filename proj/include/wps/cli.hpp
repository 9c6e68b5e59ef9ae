#pragma once

#include <string>
#include <vector>

#include "wps/core.hpp"
#include "wps/image_io.hpp"

namespace wps {

// Subcommands: synth, train, eval, infer, baseline, plot. Returns the process
// exit code: 0 on success, 2 for usage errors, the ErrorCode value for
// module errors, 1 for anything else. Errors print a single line to stderr.
int run_command(const std::vector<std::string>& args);
int run_command(int argc, const char* const* argv);

// Environment variable naming a default config file.
inline constexpr const char* kConfigEnvVar = "WPS_CONFIG";

// Alpha-blended overlay (background pixels untouched) plus a legend JSON
// written next to the PNG as <path>.legend.json.
void emit_overlay(const ImageTensor& image, const SemanticSegmentation& seg, const std::vector<Rgb>& palette,
                  const std::string& path, const std::vector<std::string>& names = {}, double alpha = 0.5);

}  // namespace wps
