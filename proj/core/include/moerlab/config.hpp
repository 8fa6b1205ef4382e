#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "moerlab/moe.hpp"
#include "moerlab/router.hpp"

namespace moerlab {

class ConfigError final : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Task { CharLm, SyntheticRegression };
enum class ScaleInitMethod { One, MonteCarlo };

std::string to_string(Task task);
std::string to_string(ScaleInitMethod method);
Task parse_task(const std::string& name);
ScaleInitMethod parse_scale_init_method(const std::string& name);

/// One experiment: model shape, router choice, and training schedule.
/// Defaults are a small char-LM run that finishes in seconds.
struct TrainConfig {
    // [model]
    Task task = Task::CharLm;
    std::size_t d = 64;
    std::size_t h_e = 128;
    std::size_t window = 8;
    Activation expert_activation = Activation::Gelu;

    // [router]
    RouterKind kind = RouterKind::Softmax;
    std::size_t experts = 16;  // key "M"
    std::size_t k = 2;
    double eps = 1e-8;
    ScaleInitMethod init_method = ScaleInitMethod::One;
    bool renormalize_after_topk = false;

    // [train]
    std::size_t batch_size = 32;
    std::size_t steps = 2000;
    std::size_t eval_every = 200;
    double lr = 6e-4;
    std::array<double, 2> betas{0.9, 0.95};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string corpus;  // path; required for char_lm, ignored otherwise

    // [report]
    std::string name = "run";

    bool operator==(const TrainConfig&) const = default;

    void validate() const;
};

/// Parses INI-style text: [section] headers, key = value lines, '#' or ';'
/// comments, blank lines ignored. Unknown sections or keys are errors that
/// name the offender and its line number. Values may appear in any order;
/// missing keys keep their defaults.
TrainConfig parse_config(const std::string& text);

TrainConfig load_config_file(const std::string& path);

/// Canonical INI echo: fixed section and key order, doubles printed with
/// %.17g, seeds and betas comma-joined. parse_config(canonical_echo(c))
/// reproduces c exactly.
std::string canonical_echo(const TrainConfig& config);

/// FNV-1a 64-bit over the canonical echo, rendered as 16 lowercase hex
/// digits. Two configs hash equal iff their resolved settings match.
std::string config_hash(const TrainConfig& config);

}  // namespace moerlab
