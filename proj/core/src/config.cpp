#include "moerlab/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fmt_detail.hpp"

namespace moerlab {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
        --e;
    return s.substr(b, e - b);
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
    throw ConfigError("config line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& value, std::size_t line, const std::string& key) {
    const std::string v = trim(value);
    if (v.empty())
        fail(line, "empty value for '" + key + "'");
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || errno == ERANGE)
        fail(line, "'" + key + "' is not a number: '" + v + "'");
    return d;
}

std::uint64_t parse_u64(const std::string& value, std::size_t line, const std::string& key) {
    const std::string v = trim(value);
    if (v.empty() || v[0] == '-' || v[0] == '+')
        fail(line, "'" + key + "' is not a non-negative integer: '" + v + "'");
    errno = 0;
    char* end = nullptr;
    const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size() || errno == ERANGE)
        fail(line, "'" + key + "' is not a non-negative integer: '" + v + "'");
    return u;
}

std::size_t parse_size(const std::string& value, std::size_t line, const std::string& key) {
    return static_cast<std::size_t>(parse_u64(value, line, key));
}

bool parse_bool(const std::string& value, std::size_t line, const std::string& key) {
    const std::string v = trim(value);
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0")
        return false;
    fail(line, "'" + key + "' must be true or false: '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& value) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : value) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

}  // namespace

std::string to_string(Task task) {
    return task == Task::CharLm ? "char_lm" : "synthetic_regression";
}

std::string to_string(ScaleInitMethod method) {
    return method == ScaleInitMethod::One ? "one" : "monte_carlo";
}

Task parse_task(const std::string& name) {
    if (name == "char_lm")
        return Task::CharLm;
    if (name == "synthetic_regression")
        return Task::SyntheticRegression;
    throw ConfigError("unknown task '" + name + "' (expected char_lm or synthetic_regression)");
}

ScaleInitMethod parse_scale_init_method(const std::string& name) {
    if (name == "one")
        return ScaleInitMethod::One;
    if (name == "monte_carlo")
        return ScaleInitMethod::MonteCarlo;
    throw ConfigError("unknown init_method '" + name + "' (expected one or monte_carlo)");
}

void TrainConfig::validate() const {
    auto check = [](bool ok, const std::string& what) {
        if (!ok)
            throw ConfigError("config: " + what);
    };
    check(d >= 1, "d must be >= 1");
    check(h_e >= 1, "h_e must be >= 1");
    check(window >= 1, "window must be >= 1");
    check(experts >= 1, "M must be >= 1");
    check(k >= 1 && k <= experts, "k must satisfy 1 <= k <= M");
    check(eps > 0.0, "eps must be positive");
    check(batch_size >= 1, "batch_size must be >= 1");
    check(steps >= 1, "steps must be >= 1");
    check(eval_every >= 1, "eval_every must be >= 1");
    check(lr > 0.0, "lr must be positive");
    check(betas[0] >= 0.0 && betas[0] < 1.0, "betas[0] must be in [0, 1)");
    check(betas[1] >= 0.0 && betas[1] < 1.0, "betas[1] must be in [0, 1)");
    check(!seeds.empty(), "seeds must list at least one seed");
    check(!name.empty(), "name must be non-empty");
    check(!renormalize_after_topk ||
              (kind == RouterKind::Softmax || kind == RouterKind::Sigmoid),
          "renormalize_after_topk requires kind softmax or sigmoid");
    check(task != Task::CharLm || !corpus.empty(), "char_lm task requires a corpus path");
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::size_t lineno = 0;

    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';')
            continue;

        if (line.front() == '[') {
            if (line.back() != ']')
                fail(lineno, "malformed section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "router" && section != "train" &&
                section != "report")
                fail(lineno, "unknown section [" + section + "]");
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            fail(lineno, "expected 'key = value', got '" + line + "'");
        if (section.empty())
            fail(lineno, "key before any [section]");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            fail(lineno, "empty key");

        try {
            if (section == "model") {
                if (key == "task")
                    cfg.task = parse_task(value);
                else if (key == "d")
                    cfg.d = parse_size(value, lineno, key);
                else if (key == "h_e")
                    cfg.h_e = parse_size(value, lineno, key);
                else if (key == "window")
                    cfg.window = parse_size(value, lineno, key);
                else if (key == "expert_activation") {
                    if (value == "gelu")
                        cfg.expert_activation = Activation::Gelu;
                    else if (value == "relu")
                        cfg.expert_activation = Activation::Relu;
                    else
                        fail(lineno, "unknown expert_activation '" + value + "'");
                } else
                    fail(lineno, "unknown key '" + key + "' in [model]");
            } else if (section == "router") {
                if (key == "kind") {
                    const auto kind = parse_router_kind(value);
                    if (!kind)
                        fail(lineno, "unknown router kind '" + value + "'");
                    cfg.kind = *kind;
                } else if (key == "M")
                    cfg.experts = parse_size(value, lineno, key);
                else if (key == "k")
                    cfg.k = parse_size(value, lineno, key);
                else if (key == "eps")
                    cfg.eps = parse_double(value, lineno, key);
                else if (key == "init_method")
                    cfg.init_method = parse_scale_init_method(value);
                else if (key == "renormalize_after_topk")
                    cfg.renormalize_after_topk = parse_bool(value, lineno, key);
                else
                    fail(lineno, "unknown key '" + key + "' in [router]");
            } else if (section == "train") {
                if (key == "batch_size")
                    cfg.batch_size = parse_size(value, lineno, key);
                else if (key == "steps")
                    cfg.steps = parse_size(value, lineno, key);
                else if (key == "eval_every")
                    cfg.eval_every = parse_size(value, lineno, key);
                else if (key == "lr")
                    cfg.lr = parse_double(value, lineno, key);
                else if (key == "betas") {
                    const auto parts = split_commas(value);
                    if (parts.size() != 2)
                        fail(lineno, "betas must be two comma-separated numbers");
                    cfg.betas[0] = parse_double(parts[0], lineno, key);
                    cfg.betas[1] = parse_double(parts[1], lineno, key);
                } else if (key == "seeds") {
                    cfg.seeds.clear();
                    for (const auto& part : split_commas(value))
                        cfg.seeds.push_back(parse_u64(part, lineno, key));
                } else if (key == "corpus")
                    cfg.corpus = value;
                else
                    fail(lineno, "unknown key '" + key + "' in [train]");
            } else {  // report
                if (key == "name")
                    cfg.name = value;
                else
                    fail(lineno, "unknown key '" + key + "' in [report]");
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            fail(lineno, e.what());
        }
    }

    cfg.validate();
    return cfg;
}

TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string canonical_echo(const TrainConfig& config) {
    std::ostringstream os;
    os << "[model]\n";
    os << "task = " << to_string(config.task) << "\n";
    os << "d = " << config.d << "\n";
    os << "h_e = " << config.h_e << "\n";
    os << "window = " << config.window << "\n";
    os << "expert_activation = " << to_string(config.expert_activation) << "\n";
    os << "\n[router]\n";
    os << "kind = " << to_string(config.kind) << "\n";
    os << "M = " << config.experts << "\n";
    os << "k = " << config.k << "\n";
    os << "eps = " << detail::g17(config.eps) << "\n";
    os << "init_method = " << to_string(config.init_method) << "\n";
    os << "renormalize_after_topk = " << (config.renormalize_after_topk ? "true" : "false")
       << "\n";
    os << "\n[train]\n";
    os << "batch_size = " << config.batch_size << "\n";
    os << "steps = " << config.steps << "\n";
    os << "eval_every = " << config.eval_every << "\n";
    os << "lr = " << detail::g17(config.lr) << "\n";
    os << "betas = " << detail::g17(config.betas[0]) << "," << detail::g17(config.betas[1])
       << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < config.seeds.size(); ++i)
        os << (i ? "," : "") << config.seeds[i];
    os << "\n";
    os << "corpus = " << config.corpus << "\n";
    os << "\n[report]\n";
    os << "name = " << config.name << "\n";
    return os.str();
}

std::string config_hash(const TrainConfig& config) {
    const std::string text = canonical_echo(config);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace moerlab
