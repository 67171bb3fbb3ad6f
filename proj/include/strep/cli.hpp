#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "strep/bench.hpp"
#include "strep/data.hpp"
#include "strep/downstream.hpp"
#include "strep/trainer.hpp"

namespace strep {

// Run configuration file: one JSON object with optional sections
//   "data"  generator settings         "model" model shape
//   "train" optimizer and loss weights "eval"  downstream protocol
//   "bench" scaling benchmark          "seed"  overrides every section seed
// Missing keys keep their defaults; unknown keys and wrong value types are rejected.
struct RunConfig {
    SynthConfig data;
    TrainConfig train;
    EvalConfig eval;
    BenchConfig bench;

    nlohmann::json to_json() const;
    /// Applies `doc` on top of the defaults after checking it against run_config_schema().
    static RunConfig from_json(const nlohmann::json& doc);
    void set_seed(std::uint64_t seed);
};

/// Accepted keys per section with the JSON type of each value.
nlohmann::json run_config_schema();

RunConfig load_run_config(const std::string& path);

nlohmann::json synth_to_json(const SynthConfig& c);
SynthConfig synth_from_json(const nlohmann::json& j);

/// Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric divergence.
int exit_code(ErrorKind kind);

/// Entry point of the strep tool; args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace strep
