#include "bobw/config.hpp"

#include <fstream>
#include <thread>

#include <fmt/format.h>

namespace bobw::harness {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("field '{}': {}", key, e.what()));
    }
}

const json& require(const json& j, const char* key, const char* where) {
    if (!j.is_object() || !j.contains(key))
        throw ConfigError(fmt::format("{} is missing required field '{}'", where, key));
    return j.at(key);
}

}  // namespace

mdp::LayeredMdp mdp_from_json(const json& j) {
    try {
        auto layers = require(j, "layers", "MDP").get<std::vector<int>>();
        const int actions = require(j, "actions", "MDP").get<int>();
        auto structure = std::make_shared<const mdp::LayerStructure>(std::move(layers), actions);
        const auto& ls = *structure;

        const auto& rows = require(j, "transition", "MDP");
        if (!rows.is_array() || static_cast<int>(rows.size()) != ls.terminal_state())
            throw StructuralError(fmt::format("'transition' needs {} state entries", ls.terminal_state()));
        std::vector<double> values(ls.kernel_size());
        for (int s = 0; s < ls.terminal_state(); ++s) {
            const auto& per_action = rows[s];
            if (!per_action.is_array() || static_cast<int>(per_action.size()) != ls.num_actions())
                throw StructuralError(fmt::format("state {} needs {} action rows", s, ls.num_actions()));
            for (int a = 0; a < ls.num_actions(); ++a) {
                const auto row = per_action[a].get<std::vector<double>>();
                if (static_cast<int>(row.size()) != ls.row_size(s))
                    throw StructuralError(fmt::format("row ({}, {}) needs {} entries (next layer size)", s, a,
                                                      ls.row_size(s)));
                std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(ls.row_offset(s, a)));
            }
        }
        mdp::TransitionKernel kernel(structure, std::move(values));
        kernel.validate();
        std::vector<std::string> names;
        if (j.contains("names")) {
            names = j.at("names").get<std::vector<std::string>>();
            if (static_cast<int>(names.size()) != ls.num_states())
                throw StructuralError("'names' must list every state");
        }
        return mdp::LayeredMdp(std::move(kernel), std::move(names));
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("malformed MDP description: {}", e.what()));
    }
}

json mdp_to_json(const mdp::LayeredMdp& m) {
    const auto& ls = m.layout();
    json rows = json::array();
    for (int s = 0; s < ls.terminal_state(); ++s) {
        json per_action = json::array();
        for (int a = 0; a < ls.num_actions(); ++a) {
            const auto row = m.transition.row(s, a);
            per_action.push_back(std::vector<double>(row.begin(), row.end()));
        }
        rows.push_back(std::move(per_action));
    }
    json out = {{"layers", ls.layer_sizes()}, {"actions", ls.num_actions()}, {"transition", rows}};
    if (!m.state_names.empty()) out["names"] = m.state_names;
    return out;
}

mdp::LayeredMdp load_mdp(const std::filesystem::path& path) { return mdp_from_json(read_json(path)); }

std::vector<double> table_from_json(const json& j, const mdp::LayerStructure& ls) {
    try {
        if (!j.is_array()) throw ConfigError("loss table must be an array");
        if (!j.empty() && j[0].is_array()) {
            if (static_cast<int>(j.size()) != ls.terminal_state())
                throw ConfigError(fmt::format("nested loss table needs {} state rows", ls.terminal_state()));
            std::vector<double> out;
            out.reserve(ls.num_pairs());
            for (const auto& row : j) {
                const auto values = row.get<std::vector<double>>();
                if (static_cast<int>(values.size()) != ls.num_actions())
                    throw ConfigError(fmt::format("loss table rows need {} entries", ls.num_actions()));
                out.insert(out.end(), values.begin(), values.end());
            }
            return out;
        }
        auto out = j.get<std::vector<double>>();
        if (static_cast<int>(out.size()) != ls.num_pairs())
            throw ConfigError(fmt::format("flat loss table needs {} entries", ls.num_pairs()));
        return out;
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("malformed loss table: {}", e.what()));
    }
}

json table_to_json(const std::vector<double>& table, const mdp::LayerStructure& ls) {
    json rows = json::array();
    for (int s = 0; s < ls.terminal_state(); ++s)
        rows.push_back(std::vector<double>(table.begin() + ls.pair(s, 0),
                                           table.begin() + ls.pair(s, 0) + ls.num_actions()));
    return rows;
}

namespace {

env::IidMode parse_mode(const json& j) {
    const auto mode = get_or<std::string>(j, "mode", "bernoulli");
    if (mode == "bernoulli") return env::IidMode::kBernoulli;
    if (mode == "mean") return env::IidMode::kMean;
    throw ConfigError(fmt::format("loss mode '{}' must be 'bernoulli' or 'mean'", mode));
}

std::vector<double> parse_means(const json& j, const mdp::LayeredMdp& m, std::uint64_t seed) {
    if (j.contains("means")) return table_from_json(j.at("means"), m.layout());
    if (j.contains("means_with_gaps")) {
        const auto& g = j.at("means_with_gaps");
        std::vector<int> actions(m.layout().terminal_state(), 0);
        if (g.contains("optimal_actions")) actions = g.at("optimal_actions").get<std::vector<int>>();
        return env::means_with_gaps(m, actions, get_or<double>(g, "min_gap", 0.2),
                                    get_or<double>(g, "max_gap", 0.5),
                                    env::RngStream(get_or<std::uint64_t>(g, "seed", seed), 0x6a9));
    }
    throw ConfigError("stochastic losses need 'means' or 'means_with_gaps'");
}

env::LossGenerator parse_losses(const json& j, const mdp::LayeredMdp& m,
                                const std::filesystem::path& base, std::uint64_t seed) {
    const auto kind = require(j, "kind", "losses").get<std::string>();
    const auto& ls = m.layout();
    if (kind == "iid_stochastic") return env::LossGenerator::iid(parse_means(j, m, seed), parse_mode(j));
    if (kind == "adversarial_scripted") {
        json tables;
        if (j.contains("script")) tables = read_json(resolve(base, j.at("script").get<std::string>()));
        else tables = require(j, "tables", "adversarial_scripted losses");
        if (!tables.is_array()) throw ConfigError("loss script must be a JSON array of loss tables");
        std::vector<std::vector<double>> script;
        for (const auto& t : tables) script.push_back(table_from_json(t, ls));
        return env::LossGenerator::scripted(std::move(script));
    }
    if (kind == "corrupted_iid") {
        const auto& c = require(j, "corruption", "corrupted_iid losses");
        return env::LossGenerator::corrupted(
            parse_means(j, m, seed), parse_mode(j), require(c, "budget", "corruption").get<double>(),
            get_or<std::vector<long long>>(c, "episodes", {}),
            c.contains("table") ? table_from_json(c.at("table"), ls) : std::vector<double>{});
    }
    if (kind == "switching_adversary") {
        const auto& tables = require(j, "tables", "switching_adversary losses");
        if (!tables.is_array() || tables.size() != 2)
            throw ConfigError("switching_adversary needs exactly two 'tables'");
        return env::LossGenerator::switching(table_from_json(tables[0], ls), table_from_json(tables[1], ls),
                                             require(j, "block_length", "switching_adversary").get<long long>(),
                                             parse_mode(j));
    }
    throw ConfigError(fmt::format("unknown loss generator kind '{}'", kind));
}

}  // namespace

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
    ExperimentConfig cfg;
    try {
        cfg.name = get_or<std::string>(j, "name", cfg.name);
        cfg.world = get_or<std::string>(j, "world", "");
        cfg.horizon_T = require(j, "T", "config").get<long long>();
        cfg.replications = get_or<int>(j, "reps", 1);
        cfg.seed = get_or<std::uint64_t>(j, "seed", 1);
        cfg.threads = get_or<int>(j, "threads", 0);
        cfg.audit = get_or<bool>(j, "audit", false);

        const auto& m = require(j, "mdp", "config");
        if (m.contains("file")) {
            cfg.mdp = std::make_shared<const mdp::LayeredMdp>(load_mdp(resolve(base_dir, m.at("file").get<std::string>())));
        } else if (m.contains("random")) {
            const auto& r = m.at("random");
            cfg.mdp = std::make_shared<const mdp::LayeredMdp>(env::random_mdp(
                require(r, "layers", "mdp.random").get<std::vector<int>>(),
                require(r, "actions", "mdp.random").get<int>(),
                env::RngStream(get_or<std::uint64_t>(r, "seed", cfg.seed), 0x3d9)));
        } else {
            cfg.mdp = std::make_shared<const mdp::LayeredMdp>(mdp_from_json(m));
        }

        cfg.losses = parse_losses(require(j, "losses", "config"), *cfg.mdp, base_dir, cfg.seed);

        const auto& l = require(j, "learner", "config");
        cfg.variant = algo::parse_variant(require(l, "variant", "learner").get<std::string>());
        if (l.contains("delta")) cfg.delta = l.at("delta").get<double>();
        cfg.gamma = get_or<double>(l, "gamma", 1.0);

        if (j.contains("output")) {
            const auto& o = j.at("output");
            cfg.output.dir = get_or<std::string>(o, "dir", cfg.output.dir);
            cfg.output.epoch_trace = get_or<bool>(o, "epoch_trace", false);
            cfg.output.solver_diagnostics = get_or<bool>(o, "solver_diagnostics", false);
        }
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("malformed config: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return config_from_json(read_json(path), path.parent_path());
}

void ExperimentConfig::validate() const {
    if (!mdp) throw ConfigError("config has no MDP");
    if (horizon_T < 1) throw ConfigError("T must be at least 1");
    if (horizon_T >= (1LL << 32)) throw ConfigError("T must fit in 32 bits");
    if (replications < 1) throw ConfigError("reps must be at least 1");
    if (threads < 0) throw ConfigError("threads must be non-negative");
    if (delta && !(*delta > 0.0 && *delta < 1.0)) throw ConfigError("delta must lie in (0,1)");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
    losses.validate(mdp->layout(), horizon_T);
}

algo::LearnerConfig ExperimentConfig::learner_config() const {
    algo::LearnerConfig lc;
    lc.variant = variant;
    lc.horizon_T = horizon_T;
    lc.delta = delta;
    lc.gamma = gamma;
    if (algo::is_known(variant))
        lc.known_transition = std::shared_ptr<const mdp::TransitionKernel>(mdp, &mdp->transition);
    lc.compute_upper_occupancy = audit;
    return lc;
}

}  // namespace bobw::harness
