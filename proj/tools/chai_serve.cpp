// HTTP backend for the annotation and evidence console.

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "chai/service.hpp"

namespace {

httplib::Server* running = nullptr;

void stop(int) {
    if (running != nullptr) {
        running->stop();
    }
}

}

int main(int argc, char** argv) {
    CLI::App app{"Query, evidence, annotation and feedback HTTP service"};
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string weights, index, manifest, annotations, feedback, model_cfg;
    app.add_option("--host", host, "Bind address")->capture_default_str();
    app.add_option("--port", port, "Port")->capture_default_str();
    app.add_option("--weights", weights, "Model weights")->required();
    app.add_option("--index", index, "Embedding index of the training split")->required();
    app.add_option("--manifest", manifest, "Dataset manifest")->required();
    app.add_option("--annotations", annotations, "Group annotation journal (created if missing)")->required();
    app.add_option("--feedback-log", feedback, "Relevance feedback log (created if missing)")->required();
    app.add_option("--model-config", model_cfg, "Model config file (default: desk architecture)");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto config = model_cfg.empty() ? chai::ModelConfig::desk_default() : chai::ModelConfig::load(model_cfg);
        chai::ServiceOptions options;
        options.annotations_path = annotations;
        options.feedback_path = feedback;
        chai::Service service(config, chai::load_weights<float>(weights, config), chai::load_index<float>(index),
                              chai::load_manifest(manifest), options);
        httplib::Server server;
        service.mount(server);
        running = &server;
        std::signal(SIGINT, stop);
        std::signal(SIGTERM, stop);
        std::cerr << "listening on " << host << ':' << port << '\n';
        if (!server.listen(host, port)) {
            std::cerr << "error: cannot listen on " << host << ':' << port << '\n';
            return 1;
        }
    } catch (const chai::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
