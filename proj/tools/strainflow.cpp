// strainflow <verify-ot|train|sweep|nfe-compare|bounds|gradcheck> --config <path> [--out <dir>] [--seed <int>]

#include <CLI11.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "strainflow/cli/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Strain/vorticity analysis and training of flow-matching velocity fields"};
    app.set_version_flag("--version", strainflow::cli::kVersion);
    app.require_subcommand(1);

    std::string config, out;
    std::uint64_t seed = 0;
    struct Sub {
        std::string name;
        CLI::App* app;
        CLI::Option* out;
        CLI::Option* seed;
    };
    std::vector<Sub> subs;
    for (const auto& [name, _] : strainflow::cli::command_table()) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " recipe");
        sub->add_option("--config", config, "INI config file")->required()->check(CLI::ExistingFile);
        CLI::Option* o = sub->add_option("--out", out, "output directory (overrides [global] out_dir)");
        CLI::Option* s = sub->add_option("--seed", seed, "root seed (overrides [global] seed)");
        subs.push_back({name, sub, o, s});
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : strainflow::cli::kExitUsage;
    }

    for (const Sub& s : subs) {
        if (!s.app->parsed()) continue;
        strainflow::cli::RunOptions opts;
        opts.config = config;
        if (s.out->count() > 0) opts.out_dir = out;
        if (s.seed->count() > 0) opts.seed = seed;
        return strainflow::cli::run_command(s.name, opts);
    }
    return strainflow::cli::kExitUsage;
}
