#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dmqn/alloc.hpp"
#include "dmqn/bench.hpp"
#include "dmqn/cache.hpp"
#include "dmqn/checkpoint.hpp"
#include "dmqn/config.hpp"
#include "dmqn/pipeline.hpp"
#include "dmqn/serving.hpp"
#include "dmqn/train.hpp"

namespace {

using nlohmann::json;

void progress(const json& j) { std::cerr << j.dump() << std::endl; }

struct Options {
    std::string config_path;
    std::string checkpoint;
    std::string cache;
    std::string out;
    std::string input = "-";
    std::optional<std::uint64_t> seed;
    std::optional<std::uint16_t> port;
};

dmqn::RunConfig resolve(const Options& o, const std::string& command) {
    dmqn::RunConfig c = o.config_path.empty() ? dmqn::parse_config(json::object()) : dmqn::load_config(o.config_path);
    if (o.seed) {
        c.model.seed = *o.seed;
        c.train.seed = *o.seed;
        c.data.synthetic.seed = *o.seed;
    }
    if (!o.checkpoint.empty()) c.train.checkpoint_path = o.checkpoint;
    if (!o.cache.empty()) c.serve.cache_path = o.cache;
    if (o.port) c.serve.port = *o.port;
    if (command == "gen-data" && !o.out.empty()) c.data.dir = o.out;
    dmqn::validate(c);
    progress({{"event", "config"}, {"command", command}, {"config", dmqn::to_json(c)}});
    return c;
}

std::string require_checkpoint(const dmqn::RunConfig& c) {
    if (c.train.checkpoint_path.empty()) throw dmqn::ConfigError("no checkpoint: pass --checkpoint or set train.checkpoint");
    return c.train.checkpoint_path;
}

int gen_data(const dmqn::RunConfig& c) {
    if (c.data.dir.empty()) throw dmqn::ConfigError("gen-data needs --out or data.dir");
    dmqn::generate_files(c.data.synthetic, c.data.dir);
    progress({{"event", "generated"}, {"dir", c.data.dir}, {"users", c.data.synthetic.users}});
    return 0;
}

int train(const dmqn::RunConfig& c) {
    require_checkpoint(c);
    auto splits = dmqn::load_splits(c.data);
    dmqn::Model model(c.model);
    progress({{"event", "model"}, {"kind", dmqn::to_string(c.model.kind)}, {"parameters", model.parameter_count()},
              {"train", splits.train->size()}, {"valid", splits.valid->size()}});
    const std::uint64_t every = std::max<std::uint64_t>(1, (splits.train->size() / c.train.batch_size) / 10);
    auto on_step = [&](const dmqn::TrainProgress& p) {
        if (p.step % every == 0 || p.step + 1 == p.total_steps) {
            progress({{"event", "step"}, {"epoch", p.epoch}, {"step", p.step}, {"of", p.total_steps},
                      {"loss", p.batch_loss}, {"tau", p.temperature}, {"grad_norm", p.grad_norm}});
        }
    };
    const auto* valid = splits.valid->size() > 0 ? splits.valid.get() : nullptr;
    for (const auto& r : dmqn::train(model, *splits.train, c.train, valid, on_step)) {
        json j{{"event", "epoch"}, {"epoch", r.epoch}, {"train_logloss", r.train_logloss},
               {"tau", r.final_temperature}, {"seconds", r.seconds}};
        if (r.validation) j["validation"] = dmqn::to_json(*r.validation);
        progress(j);
    }
    progress({{"event", "saved"}, {"checkpoint", c.train.checkpoint_path}});
    return 0;
}

int eval(const dmqn::RunConfig& c) {
    auto model = dmqn::load_checkpoint(require_checkpoint(c));
    auto splits = dmqn::load_splits(c.data);
    std::cout << dmqn::to_json(dmqn::evaluate(model, *splits.test)).dump() << std::endl;
    return 0;
}

int precompute(const dmqn::RunConfig& c) {
    if (c.serve.cache_path.empty()) throw dmqn::ConfigError("precompute needs --cache or serve.cache");
    auto model = dmqn::load_checkpoint(require_checkpoint(c));
    auto splits = dmqn::load_splits(c.data);
    dmqn::ConcatSource all({splits.train.get(), splits.valid.get(), splits.test.get()});
    dmqn::precompute(model, all, c.serve.cache_path);
    progress({{"event", "cache_written"}, {"path", c.serve.cache_path}});
    return 0;
}

int score(const dmqn::RunConfig& c, const Options& o) {
    auto model = dmqn::load_checkpoint(require_checkpoint(c));
    std::optional<dmqn::CacheFile> cache;
    if (!c.serve.cache_path.empty()) cache = dmqn::CacheFile::open(c.serve.cache_path);
    std::ifstream file;
    if (o.input != "-") {
        file.open(o.input);
        if (!file) throw dmqn::ConfigError("cannot read requests file " + o.input);
    }
    std::ofstream out_file;
    if (!o.out.empty()) {
        out_file.open(o.out, std::ios::trunc);
        if (!out_file) throw dmqn::StoreError("cannot write " + o.out);
    }
    std::istream& in = o.input == "-" ? std::cin : file;
    std::ostream& out = o.out.empty() ? std::cout : out_file;
    const auto bad = dmqn::score_jsonl(model, cache ? &*cache : nullptr, in, out);
    progress({{"event", "scored"}, {"malformed", bad}});
    return 0;
}

int serve(const dmqn::RunConfig& c) {
    auto model = dmqn::load_checkpoint(require_checkpoint(c));
    std::optional<dmqn::CacheFile> cache;
    if (!c.serve.cache_path.empty()) cache = dmqn::CacheFile::open(c.serve.cache_path);
    httplib::Server server;
    dmqn::install_routes(server, model, cache ? &*cache : nullptr);
    progress({{"event", "listening"}, {"host", c.serve.host}, {"port", c.serve.port}});
    if (!server.listen(c.serve.host, c.serve.port))
        throw dmqn::Error("cannot listen on " + c.serve.host + ":" + std::to_string(c.serve.port));
    return 0;
}

int bench(const dmqn::RunConfig& c) {
    dmqn::BenchConfig b;
    b.lengths = c.serve.bench_lengths;
    b.trials = c.serve.bench_trials;
    b.model = c.model;
    b.seed = c.data.synthetic.seed;
    std::cout << dmqn::to_json(dmqn::bench_scaling(b)).dump() << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    dmqn::tune_allocator();
    CLI::App app{"Deep multiple quantization network: data, training, caching and serving"};
    app.require_subcommand(1);
    Options o;

    auto add = [&](const std::string& name, const std::string& help) {
        auto* s = app.add_subcommand(name, help);
        s->add_option("--config", o.config_path, "JSON config file");
        s->add_option("--seed", o.seed, "Overrides model, train and data seeds");
        return s;
    };
    auto* gen = add("gen-data", "Write synthetic train/valid/test JSONL files");
    gen->add_option("--out", o.out, "Output directory");
    auto* tr = add("train", "Train a model and write its checkpoint");
    tr->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
    auto* ev = add("eval", "Evaluate a checkpoint on the test split (JSON on stdout)");
    ev->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
    auto* pre = add("precompute", "Write the per-user interest cache");
    pre->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
    pre->add_option("--cache", o.cache, "Cache file path");
    auto* sc = add("score", "Score JSONL requests (one response line per request)");
    sc->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
    sc->add_option("--cache", o.cache, "Cache file path");
    sc->add_option("--out", o.out, "Output file (default stdout)");
    sc->add_option("input", o.input, "Requests file, - for stdin");
    auto* sv = add("serve", "Serve POST /score over HTTP");
    sv->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
    sv->add_option("--cache", o.cache, "Cache file path");
    sv->add_option("--port", o.port, "TCP port");
    add("bench", "Forward-time scaling benchmark (JSON on stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        const auto c = resolve(o, command);
        if (command == "gen-data") return gen_data(c);
        if (command == "train") return train(c);
        if (command == "eval") return eval(c);
        if (command == "precompute") return precompute(c);
        if (command == "score") return score(c, o);
        if (command == "serve") return serve(c);
        return bench(c);
    } catch (const dmqn::ConfigError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
}
