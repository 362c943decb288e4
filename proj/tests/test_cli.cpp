#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "doctest.h"
#include "dwclust/cli.hpp"
#include "dwclust/transport.hpp"
#include "helpers.hpp"

using namespace dwclust;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

class TempDir {
public:
    TempDir() : path_(fs::temp_directory_path() / ("dwclust_cli_" + std::to_string(::getpid()))) {
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

std::string spec_path(int experiment) {
    return std::string(DWCLUST_DATA_DIR) + "/experiment" + std::to_string(experiment) + ".json";
}

// Captures "listening PORT" from the host command's output.
class PortCapture : public std::streambuf {
public:
    std::future<int> port() { return promise_.get_future(); }

protected:
    int overflow(int c) override {
        if (c != EOF) text_.push_back(static_cast<char>(c));
        return c;
    }
    int sync() override {
        const auto pos = text_.find("listening ");
        if (!done_ && pos != std::string::npos && text_.find('\n', pos) != std::string::npos) {
            promise_.set_value(std::stoi(text_.substr(pos + 10)));
            done_ = true;
        }
        return 0;
    }

private:
    std::string text_;
    std::promise<int> promise_;
    bool done_ = false;
};

}  // namespace

TEST_CASE("gen writes reproducible files") {
    TempDir dir;
    const Run a = cli({"gen", "--spec", spec_path(1), "--seed", "42", "--out", dir / "a.csv", "--labels", dir / "al.csv"});
    REQUIRE(a.code == 0);
    CHECK(a.out.find("N=2048 D=2") != std::string::npos);
    const Run b = cli({"gen", "--spec", spec_path(1), "--seed", "42", "--out", dir / "b.csv", "--labels", dir / "bl.csv"});
    REQUIRE(b.code == 0);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(slurp(dir / "al.csv") == slurp(dir / "bl.csv"));
    const Matrix m = read_csv_matrix(dir / "a.csv");
    CHECK(m.rows() == 2048);
    CHECK(m.cols() == 2);
}

TEST_CASE("gen failures leave no output") {
    TempDir dir;
    const Run r = cli({"gen", "--spec", dir / "missing.json", "--seed", "1", "--out", dir / "x.csv", "--labels", dir / "y.csv"});
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
    CHECK_FALSE(fs::exists(dir / "x.csv"));
    CHECK_FALSE(fs::exists(dir / "y.csv"));
    CHECK(cli({"gen", "--spec", spec_path(1), "--out", dir / "x.csv", "--labels", dir / "y.csv"}).code == 1);
    CHECK(cli({}).code == 1);
    CHECK(cli({"frobnicate"}).code == 1);
}

TEST_CASE("cluster: by-cluster experiment-1 run is reproducible") {
    TempDir dir;
    REQUIRE(cli({"gen", "--spec", spec_path(1), "--seed", "7", "--out", dir / "d.csv", "--labels", dir / "l.csv"}).code == 0);
    const std::vector<std::string> base = {"cluster", "--data", dir / "d.csv", "--j", "2", "--hosts", "2",
                                           "--shard-policy", "by-cluster", "--labels", dir / "l.csv", "--seed", "3"};
    auto with = [&](std::vector<std::string> extra) {
        std::vector<std::string> args = base;
        args.insert(args.end(), extra.begin(), extra.end());
        return args;
    };
    const Run a = cli(with({"--out", dir / "r1.json", "--trace", dir / "t.csv", "--assignments", dir / "a.csv"}));
    REQUIRE(a.code == 0);
    const Json doc = Json::parse(slurp(dir / "r1.json"));
    CHECK(doc["trace"].size() > 0);
    CHECK(doc.contains("duality_gap_estimate"));
    CHECK(slurp(dir / "t.csv").rfind("restart,round,primal,dual,gap\n", 0) == 0);

    const Run eval = cli({"eval", "--pred", dir / "a.csv", "--truth", dir / "l.csv"});
    REQUIRE(eval.code == 0);
    CHECK(std::stod(eval.out) <= 0.1);

    REQUIRE(cli(with({"--out", dir / "r2.json", "--assignments", dir / "a.csv"})).code == 0);
    CHECK(slurp(dir / "r1.json") == slurp(dir / "r2.json"));
}

TEST_CASE("cluster: experiment 2 with noise variance completes") {
    TempDir dir;
    REQUIRE(cli({"gen", "--spec", spec_path(2), "--seed", "1", "--out", dir / "d.csv", "--labels", dir / "l.csv"}).code == 0);
    const Run r = cli({"cluster", "--data", dir / "d.csv", "--j", "2", "--hosts", "2", "--shard-policy", "by-cluster",
                       "--labels", dir / "l.csv", "--sigma-n", "0.5", "--seed", "1", "--restarts", "1", "--out",
                       dir / "r.json"});
    CHECK(r.code == 0);
    CHECK(std::isfinite(Json::parse(slurp(dir / "r.json"))["objective"].get<double>()));
}

TEST_CASE("cluster: usage and runtime errors") {
    TempDir dir;
    std::ofstream(dir / "d.csv") << "1,2\n3,4\n5,6\n7,8\n";
    const std::vector<std::string> base = {"cluster", "--data", dir / "d.csv", "--seed", "1", "--out", dir / "r.json"};
    auto with = [&](std::vector<std::string> extra) {
        std::vector<std::string> args = base;
        args.insert(args.end(), extra.begin(), extra.end());
        return args;
    };
    CHECK(cli(with({"--j", "2"})).code == 1);                                      // no hosts
    CHECK(cli(with({"--j", "2", "--hosts", "2", "--host-addrs", "a:1"})).code == 1);  // both backends
    CHECK(cli(with({"--j", "1", "--hosts", "2"})).code == 2);
    CHECK(cli(with({"--j", "2", "--hosts", "2", "--shard-policy", "by-cluster"})).code == 2);  // no labels
    CHECK(cli(with({"--j", "2", "--host-addrs", "127.0.0.1:1"})).code == 2);         // nobody listening
    CHECK_FALSE(fs::exists(dir / "r.json"));
}

TEST_CASE("eval") {
    TempDir dir;
    std::ofstream(dir / "t.csv") << "0\n0\n0\n0\n1\n1\n1\n1\n";
    std::ofstream(dir / "s.csv") << "1\n1\n1\n1\n0\n0\n0\n0\n";
    std::ofstream(dir / "m.csv") << "0\n0\n0\n1\n1\n1\n1\n1\n";
    std::ofstream(dir / "short.csv") << "0\n1\n";
    CHECK(std::stod(cli({"eval", "--pred", dir / "t.csv", "--truth", dir / "t.csv"}).out) == 0.0);
    CHECK(std::stod(cli({"eval", "--pred", dir / "s.csv", "--truth", dir / "t.csv"}).out) == 0.0);
    CHECK(cli({"eval", "--pred", dir / "m.csv", "--truth", dir / "t.csv"}).out == "0.125\n");
    CHECK(cli({"eval", "--pred", dir / "short.csv", "--truth", dir / "t.csv"}).code == 2);
}

TEST_CASE("gap-study writes one row per size") {
    TempDir dir;
    const Run r = cli({"gap-study", "--spec", spec_path(1), "--sizes", "64,128", "--seed", "2", "--out", dir / "g.csv"});
    REQUIRE(r.code == 0);
    const Matrix g = read_csv_matrix(dir / "g.csv", true);
    REQUIRE(g.rows() == 2);
    CHECK(g(0, 0) == 64);
    CHECK(g(1, 0) == 128);
    CHECK(g.col(3).minCoeff() >= -1e-6);
    CHECK(cli({"gap-study", "--spec", spec_path(1), "--sizes", "64,x", "--seed", "2", "--out", dir / "h.csv"}).code == 2);
}

TEST_CASE("shard and host: a scripted coordinator session") {
    TempDir dir;
    REQUIRE(cli({"gen", "--spec", spec_path(3), "--seed", "5", "--out", dir / "d.csv", "--labels", dir / "l.csv"}).code == 0);
    REQUIRE(cli({"shard", "--data", dir / "d.csv", "--hosts", "2", "--shard-policy", "fractions:0.7,0.3", "--labels",
                 dir / "l.csv", "--out-prefix", dir / "s"})
                .code == 0);
    const Matrix shard = read_csv_matrix(dir / "s0.csv");
    CHECK(shard.rows() + read_csv_matrix(dir / "s1.csv").rows() == 2048);

    PortCapture capture;
    std::future<int> port = capture.port();
    std::ostream host_out(&capture);
    std::ostringstream host_err;
    int code = -1;
    std::thread host([&] {
        code = run_cli({"host", "--listen", "127.0.0.1:0", "--data", dir / "s0.csv"}, host_out, host_err);
    });
    const std::string address = "127.0.0.1:" + std::to_string(port.get());

    CHECK(cli({"host", "--listen", address, "--data", dir / "s0.csv"}).code == 2);  // port in use
    {
        TcpTransport tr({address});
        const auto info = hello(tr);
        CHECK(info[0].n_samples == shard.rows());
        Matrix a = Matrix::Zero(shard.rows(), 2);
        a.col(0).setOnes();
        scatter(tr, 0, {Json{{"op", "init"}, {"assignments", to_json(a)}}});
        const auto results = broadcast_and_collect(tr, helpers::identity_params(2, 2, 2048, 1), {true, false, false});
        CHECK(results.size() == 1);
        shutdown(tr);
    }
    host.join();
    CHECK(code == 0);
}
