// Serves a declarative value function over the external evaluator protocol.
//
//   evo2048-evaluator --spec specs/vf0003.json
//   evo2048-evaluator --canonical post10

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "evo2048/external_evaluator.hpp"
#include "evo2048/heuristics.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Out-of-process evaluator for a value function spec"};
    std::string spec_path;
    std::string canonical;
    auto* spec_opt = app.add_option("--spec", spec_path, "Value function spec (JSON)")->check(CLI::ExistingFile);
    app.add_option("--canonical", canonical, "Built-in spec: pre10 or post10")
        ->check(CLI::IsMember({"pre10", "post10"}))
        ->excludes(spec_opt);
    CLI11_PARSE(app, argc, argv);

    evo2048::ValueFunctionSpec spec;
    try {
        if (!spec_path.empty()) {
            std::ifstream in(spec_path);
            spec = evo2048::spec_from_json(nlohmann::json::parse(in));
        } else if (canonical == "pre10") {
            spec = evo2048::canonical_specs().pre10;
        } else {
            spec = evo2048::canonical_specs().post10;
        }
    } catch (const std::exception& e) {
        std::cerr << "evo2048-evaluator: " << e.what() << "\n";
        return 1;
    }

    std::printf("%s 1\n", evo2048::kEvaluatorBanner.data());
    std::fflush(stdout);
    std::string line;
    while (std::getline(std::cin, line)) {
        try {
            const double v = evo2048::eval_spec(spec, evo2048::decode_board_request(line));
            std::printf("%.17g\n", v);
            std::fflush(stdout);
        } catch (const std::exception& e) {
            std::cerr << "evo2048-evaluator: " << e.what() << "\n";
            return 2;
        }
    }
    return 0;
}
