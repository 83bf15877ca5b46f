// mos: generate data, sweep, train, evaluate and detect shift from one config.
//
// Exit codes:
//   0  all requested artifacts written
//   1  unexpected internal error
//   2  bad command line
//   3  invalid configuration
//   4  required input file missing
//   5  file could not be read or written
//   6  input file malformed

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mos/errors.hpp"
#include "mos/experiment.hpp"

namespace {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kConfig = 3,
    kMissingFile = 4,
    kIo = 5,
    kFormat = 6,
};

mos::Json load_config(const std::string &path) {
    if (path.empty()) return mos::experiment_to_json(mos::default_experiment());
    std::ifstream in(path);
    if (!in) throw mos::MissingFileError("cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return mos::Json::parse(buf.str());
    } catch (const mos::Json::exception &e) {
        throw mos::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Mixture-of-softmax shortcut experiments"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    std::vector<std::string> overrides;
    bool quiet = false;

    app.add_option("--config", config_path, "Experiment config (JSON)");
    app.add_option("--out", out_dir, "Output directory (overrides output_dir)");
    app.add_option("--seed", seed, "Global seed (overrides seed)");
    app.add_option("--workers", workers, "Parallel sweep workers")->check(CLI::PositiveNumber);
    app.add_option("--set", overrides, "Override a config field: path.to.field=value");
    app.add_flag("--quiet", quiet, "Suppress progress on stderr");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen", "Write the train/dev/OOD dataset CSVs"},
        {"train", "Train a model on the train split"},
        {"sweep", "Two-stage search over experts and penalty weight"},
        {"eval", "Accuracy, shift statistic and profiles per split"},
        {"detect", "Flag shifted splits and report gated accuracy"},
        {"report", "Collect all step outputs into one report"},
    };
    for (const auto &[name, help] : commands) app.add_subcommand(name, help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        mos::Json doc = load_config(config_path);
        for (const auto &o : overrides) mos::apply_override(doc, o);
        if (!out_dir.empty()) doc["output_dir"] = out_dir;
        if (seed) doc["seed"] = *seed;

        mos::CommandContext ctx;
        ctx.config = mos::experiment_from_json(doc);
        ctx.config.validate();
        ctx.output_dir = ctx.config.output_dir;
        ctx.files = &mos::default_file_layer();
        ctx.workers = workers;
        ctx.log = quiet ? nullptr : &std::cerr;
        const auto manifest = mos::run_command(command, ctx);
        for (const auto &f : manifest.files) std::cout << (ctx.output_dir / f).string() << '\n';
        return kOk;
    } catch (const mos::ConfigError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    } catch (const mos::MissingFileError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kMissingFile;
    } catch (const mos::FormatError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFormat;
    } catch (const mos::IoError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const mos::UsageError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception &e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kInternal;
    }
}
