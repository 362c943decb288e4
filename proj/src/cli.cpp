#include "dwclust/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "dwclust/data_eval.hpp"
#include "dwclust/transport.hpp"

namespace dwclust {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, sep)) parts.push_back(item);
    return parts;
}

std::vector<double> parse_numbers(const std::string& s, const std::string& what) {
    std::vector<double> v;
    for (const std::string& p : split(s, ',')) {
        std::size_t used = 0;
        double x = 0.0;
        try {
            x = std::stod(p, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != p.size()) throw ConfigError(what + ": '" + p + "' is not a number");
        v.push_back(x);
    }
    if (v.empty()) throw ConfigError(what + ": empty list");
    return v;
}

// "by-cluster", "interleaved" or "fractions:f0,f1,..."
struct PolicyArg {
    ShardPolicy policy = ShardPolicy::interleaved;
    std::vector<double> fractions;
};

PolicyArg parse_policy(const std::string& s) {
    PolicyArg p;
    const std::size_t colon = s.find(':');
    p.policy = shard_policy_from_string(s.substr(0, colon));
    if (p.policy == ShardPolicy::fractions) {
        if (colon == std::string::npos) throw ConfigError("fractions policy needs values, e.g. fractions:0.7,0.3");
        p.fractions = parse_numbers(s.substr(colon + 1), "fractions");
    } else if (colon != std::string::npos) {
        throw ConfigError("only the fractions policy takes values");
    }
    return p;
}

ShardLayout make_layout(const PolicyArg& policy, int n_hosts, Index n, const std::string& labels_path) {
    std::vector<int> labels;
    if (policy.policy == ShardPolicy::interleaved) {
        labels.assign(static_cast<std::size_t>(n), 0);
    } else {
        if (labels_path.empty()) throw ConfigError(to_string(policy.policy) + " sharding needs --labels");
        labels = read_labels(labels_path);
        if (static_cast<Index>(labels.size()) != n) throw ConfigError("labels and data differ in length");
    }
    return shard_dataset(labels, policy.policy, n_hosts, policy.fractions);
}

// Writes every file next to its target first and renames only when all
// writes succeeded, so a failure leaves no partial output.
class Outputs {
public:
    void add(const std::string& path, std::string content) {
        if (!path.empty()) files_.emplace_back(path, std::move(content));
    }
    void commit() const {
        for (const auto& [path, content] : files_) {
            std::ofstream f(path + ".part", std::ios::binary);
            if (!f || !(f << content) || !(f.flush())) throw ConfigError("cannot write " + path);
        }
        for (const auto& [path, content] : files_)
            if (std::rename((path + ".part").c_str(), path.c_str()) != 0)
                throw ConfigError("cannot move output into place: " + path);
    }

private:
    std::vector<std::pair<std::string, std::string>> files_;
};

std::string matrix_csv(const Matrix& m) {
    std::ostringstream out;
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_double(m(r, c));
        out << '\n';
    }
    return out.str();
}

std::string labels_csv(const std::vector<int>& labels) {
    std::ostringstream out;
    for (int l : labels) out << l << '\n';
    return out.str();
}

struct GenArgs {
    std::string spec, out, labels;
    std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    const GeneratedData g = generate_mixture(read_mixture_spec(a.spec), a.seed);
    Outputs files;
    files.add(a.out, matrix_csv(g.data.samples()));
    files.add(a.labels, labels_csv(g.labels));
    files.commit();
    out << "N=" << g.data.n_samples() << " D=" << g.data.dim() << '\n';
    return 0;
}

struct ShardArgs {
    std::string data, labels, policy = "interleaved", prefix;
    int hosts = 0;
};

int cmd_shard(const ShardArgs& a, std::ostream& out) {
    const Dataset data(read_csv_matrix(a.data));
    const ShardLayout layout = make_layout(parse_policy(a.policy), a.hosts, data.n_samples(), a.labels);
    Outputs files;
    const std::vector<Matrix> shards = shard_matrices(data, layout);
    for (std::size_t k = 0; k < shards.size(); ++k) {
        files.add(a.prefix + std::to_string(k) + ".csv", matrix_csv(shards[k]));
        out << "host " << k << ": " << shards[k].rows() << " samples\n";
    }
    files.commit();
    return 0;
}

struct ClusterArgs {
    std::string data, labels, policy = "interleaved", host_addrs, out, trace, assignments;
    std::string proportion_mode = "fixed-uniform", rounding_mode = "randomized", proportions;
    int j = 2;
    int hosts = 0;
    std::uint64_t seed = 0;
    double sigma_n = 0.0;
    int restarts = 3;
    int max_outer_rounds = 50;
    int dual_rounds = 30;
    double step_size = 1.0;
    double tol = 1e-6;
};

int cmd_cluster(const ClusterArgs& a, std::ostream& out) {
    CoordinatorConfig config;
    config.n_clusters = a.j;
    config.reg.sigma_n_sq = a.sigma_n;
    config.seed = a.seed;
    config.restarts = a.restarts;
    config.max_outer_rounds = a.max_outer_rounds;
    config.dual_rounds = a.dual_rounds;
    config.step_size_initial = a.step_size;
    config.tol_objective = a.tol;
    config.proportion_mode = proportion_mode_from_string(a.proportion_mode);
    config.rounding_mode = rounding_mode_from_string(a.rounding_mode);
    if (!a.proportions.empty()) {
        const std::vector<double> p = parse_numbers(a.proportions, "proportions");
        config.proportions = Eigen::Map<const Vector>(p.data(), static_cast<Index>(p.size()));
    }
    config.validate();

    const Dataset data(read_csv_matrix(a.data));
    const PolicyArg policy = parse_policy(a.policy);
    std::unique_ptr<Transport> transport;
    ShardLayout layout;
    if (!a.host_addrs.empty()) {
        const std::vector<std::string> addrs = split(a.host_addrs, ',');
        layout = make_layout(policy, static_cast<int>(addrs.size()), data.n_samples(), a.labels);
        transport = std::make_unique<TcpTransport>(addrs);
    } else {
        layout = make_layout(policy, a.hosts, data.n_samples(), a.labels);
        transport = std::make_unique<InProcessTransport>(shard_matrices(data, layout));
    }
    const ClusteringResult r = run_clustering(*transport, config, &layout);
    shutdown(*transport);

    Outputs files;
    files.add(a.out, result_to_json(r, config, a.assignments).dump(2) + "\n");
    files.add(a.trace, trace_csv(r));
    files.add(a.assignments, labels_csv(r.labels));
    files.commit();
    out << "objective=" << format_double(r.objective) << " dual=" << format_double(r.dual_value)
        << " gap=" << format_double(r.duality_gap_estimate) << " rounds=" << r.rounds_used << '\n';
    return 0;
}

struct HostArgs {
    std::string listen, data;
};

int cmd_host(const HostArgs& a, std::ostream& out) {
    const Matrix shard = read_csv_matrix(a.data);
    serve_host(shard, a.listen, [&](int port) { out << "listening " << port << std::endl; });
    return 0;
}

struct EvalArgs {
    std::string pred, truth;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    out << format_double(miss_rate(read_labels(a.pred), read_labels(a.truth))) << '\n';
    return 0;
}

struct GapArgs {
    std::string spec, sizes, out;
    std::uint64_t seed = 0;
    double sigma_n = 0.0;
};

int cmd_gap_study(const GapArgs& a, std::ostream& out) {
    std::vector<Index> sizes;
    for (double s : parse_numbers(a.sizes, "sizes")) {
        if (s < 2 || s != static_cast<double>(static_cast<Index>(s))) throw ConfigError("sizes must be integers >= 2");
        sizes.push_back(static_cast<Index>(s));
    }
    CoordinatorConfig config;
    config.seed = a.seed;
    config.reg.sigma_n_sq = a.sigma_n;
    const GapReport report = duality_gap_probe(read_mixture_spec(a.spec), sizes, config, a.seed);
    Outputs files;
    files.add(a.out, report.csv());
    files.commit();
    out << report.csv();
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Distributed compression-based clustering"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* g = app.add_subcommand("gen", "Sample a Gaussian mixture");
    g->add_option("--spec", gen.spec, "mixture spec JSON")->required();
    g->add_option("--seed", gen.seed)->required();
    g->add_option("--out", gen.out, "data CSV")->required();
    g->add_option("--labels", gen.labels, "labels CSV")->required();

    ShardArgs shard;
    CLI::App* s = app.add_subcommand("shard", "Split a dataset into per-host CSV files");
    s->add_option("--data", shard.data)->required();
    s->add_option("--hosts", shard.hosts)->required()->check(CLI::PositiveNumber);
    s->add_option("--shard-policy", shard.policy, "by-cluster | interleaved | fractions:f0,f1,...");
    s->add_option("--labels", shard.labels, "component labels (by-cluster, fractions)");
    s->add_option("--out-prefix", shard.prefix, "writes PREFIX0.csv, PREFIX1.csv, ...")->required();

    ClusterArgs cl;
    CLI::App* c = app.add_subcommand("cluster", "Run the distributed clustering");
    c->add_option("--data", cl.data)->required();
    c->add_option("--j", cl.j, "number of clusters")->required();
    CLI::Option* hosts = c->add_option("--hosts", cl.hosts, "in-process hosts")->check(CLI::PositiveNumber);
    CLI::Option* addrs = c->add_option("--host-addrs", cl.host_addrs, "HOST:PORT,... of running hosts");
    hosts->excludes(addrs);
    c->add_option("--shard-policy", cl.policy, "by-cluster | interleaved | fractions:f0,f1,...");
    c->add_option("--labels", cl.labels, "component labels (by-cluster, fractions)");
    c->add_option("--sigma-n", cl.sigma_n, "noise variance sigma_n^2 added to every covariance");
    c->add_option("--seed", cl.seed)->required();
    c->add_option("--out", cl.out, "result JSON")->required();
    c->add_option("--trace", cl.trace, "trace CSV");
    c->add_option("--assignments", cl.assignments, "labels CSV");
    c->add_option("--restarts", cl.restarts);
    c->add_option("--max-outer-rounds", cl.max_outer_rounds);
    c->add_option("--dual-rounds", cl.dual_rounds);
    c->add_option("--step-size", cl.step_size);
    c->add_option("--tol", cl.tol);
    c->add_option("--proportion-mode", cl.proportion_mode, "fixed-uniform | optimize");
    c->add_option("--proportions", cl.proportions, "p0,p1,... targets or starting point");
    c->add_option("--rounding-mode", cl.rounding_mode, "randomized | argmax");

    HostArgs host;
    CLI::App* h = app.add_subcommand("host", "Serve one shard to a coordinator");
    h->add_option("--listen", host.listen, "HOST:PORT (port 0 picks one)")->required();
    h->add_option("--data", host.data, "shard CSV")->required();

    EvalArgs ev;
    CLI::App* e = app.add_subcommand("eval", "Permutation-matched miss rate");
    e->add_option("--pred", ev.pred)->required();
    e->add_option("--truth", ev.truth)->required();

    GapArgs gap;
    CLI::App* gs = app.add_subcommand("gap-study", "Duality gap against sample size");
    gs->add_option("--spec", gap.spec)->required();
    gs->add_option("--sizes", gap.sizes, "comma-separated N values")->required();
    gs->add_option("--seed", gap.seed)->required();
    gs->add_option("--out", gap.out, "gap CSV")->required();
    gs->add_option("--sigma-n", gap.sigma_n, "noise variance sigma_n^2");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << '\n';
        return 1;
    }
    if (c->parsed() && cl.host_addrs.empty() && cl.hosts == 0) {
        err << "error: cluster needs --hosts or --host-addrs\n";
        return 1;
    }

    try {
        if (g->parsed()) return cmd_gen(gen, out);
        if (s->parsed()) return cmd_shard(shard, out);
        if (c->parsed()) return cmd_cluster(cl, out);
        if (h->parsed()) return cmd_host(host, out);
        if (e->parsed()) return cmd_eval(ev, out);
        return cmd_gap_study(gap, out);
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return 2;
    }
}

}  // namespace dwclust
