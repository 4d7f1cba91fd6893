// Copyright 2026 The btshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "btshift/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"btshift: Bradley-Terry strengths under covariate shift"};
  app.require_subcommand(1);
  std::string config;
  for (const char* name : {"simulate", "estimate", "marginal-bt"}) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " command");
    sub->add_option("-c,--config", config, "JSON config file")->required();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : btshift::cli::exit_config;
  }
  return btshift::cli::run_command(app.get_subcommands().front()->get_name(), config, std::cerr);
}
