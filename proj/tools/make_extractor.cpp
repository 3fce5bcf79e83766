// Writes the fixed random-feature extractor used by the perceptual loss.
// Training refuses to start without one so that runs never silently rebuild
// a different feature space; this tool creates the canonical file.

#include "deblurkit/adversarial.hpp"
#include "deblurkit/errors.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <string>

int main(int argc, char** argv) {
    CLI::App app{"write the fixed feature extractor used by the perceptual loss"};
    std::string out;
    app.add_option("--out", out, "destination file")->required();
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        dbk::FeatureExtractor fx = dbk::FeatureExtractor::make_default();
        dbk::FeatureExtractor::save(out, fx);
        std::cout << "wrote " << out << " (" << fx.layer_name() << " features)\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
