// coemb: train, evaluate and navigate cooperative instance/attribute/category
// embeddings from precomputed image features.

#include "coemb/coemb.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace {

using coemb::Json;
namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

// A JSON object of flag values, keyed by flag name without the dashes.
// Arrays become comma-separated lists; booleans toggle flags.
std::vector<std::string> config_arguments(const std::string& path, const std::set<std::string>& given) {
    std::ifstream is(path);
    if (!is) throw coemb::DataError("cannot open config file " + path);
    Json j;
    try {
        j = Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw coemb::DataError(std::string("malformed config file: ") + e.what());
    }
    if (!j.is_object()) throw coemb::DataError("config file must hold a JSON object");
    auto scalar = [](const Json& v) {
        return v.is_string() ? v.get<std::string>() : v.dump();
    };
    std::vector<std::string> out;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (given.count(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) out.push_back(flag);
        } else if (value.is_array()) {
            std::string joined;
            for (const auto& v : value) joined += (joined.empty() ? "" : ",") + scalar(v);
            out.insert(out.end(), {flag, joined});
        } else {
            out.insert(out.end(), {flag, scalar(value)});
        }
    }
    return out;
}

// Rewrites `<subcommand> ... --config file ...` so that the file's values come
// right after the subcommand and the command-line flags follow them.
std::vector<std::string> expand_config(int argc, char** argv, const std::set<std::string>& subcommands) {
    std::vector<std::string> args(argv, argv + argc);
    auto sub = std::find_if(args.begin() + 1, args.end(), [&](const std::string& a) { return subcommands.count(a); });
    if (sub == args.end()) return args;
    const auto head = static_cast<std::size_t>(sub - args.begin()) + 1;
    std::vector<std::string> rest(args.begin() + static_cast<std::ptrdiff_t>(head), args.end());
    std::optional<std::string> path;
    std::vector<std::string> kept;
    std::set<std::string> given;
    for (std::size_t i = 0; i < rest.size(); ++i) {
        if (rest[i] == "--config" && i + 1 < rest.size()) {
            path = rest[++i];
            continue;
        }
        if (rest[i].rfind("--config=", 0) == 0) {
            path = rest[i].substr(9);
            continue;
        }
        if (rest[i].rfind("--", 0) == 0) given.insert(rest[i].substr(0, rest[i].find('=')));
        kept.push_back(rest[i]);
    }
    if (!path) return args;
    std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(head));
    for (auto& a : config_arguments(*path, given)) out.push_back(std::move(a));
    out.insert(out.end(), kept.begin(), kept.end());
    return out;
}

struct DataPaths {
    std::string manifest;
    std::string features;

    void add(CLI::App* cmd) {
        cmd->add_option("--manifest", manifest, "Dataset manifest (JSON)")->required();
        cmd->add_option("--features", features, "Feature file (CEFV)")->required();
    }
    coemb::Dataset load() const { return coemb::load_dataset(manifest, features); }
};

// Listed for --help only; expand_config consumes it before parsing.
void add_config_flag(CLI::App* cmd) {
    cmd->add_option("--config", "JSON file with flag values (flags override it)");
}

void write_or_print(const Json& j, const std::string& out) {
    if (out.empty())
        std::cout << coemb::dump(j);
    else
        coemb::emit_report(j, out);
}

std::size_t find_attribute(const coemb::LabelSpace& labels, const std::string& name) {
    auto k = labels.attribute_index(name);
    if (!k) throw coemb::DataError("unknown attribute \"" + name + "\"");
    return *k;
}

std::size_t find_category(const coemb::LabelSpace& labels, const std::string& name) {
    auto y = labels.category_index(name);
    if (!y) throw coemb::DataError("unknown category \"" + name + "\"");
    return *y;
}

std::size_t find_entry(const coemb::RetrievalIndex& index, const std::string& id) {
    for (std::size_t r = 0; r < index.size(); ++r)
        if (index.item_ids[r] == id) return r;
    throw coemb::DataError("item \"" + id + "\" is not in the " +
                           std::string(coemb::to_string(index.split)) + " split");
}

coemb::Term attribute_term(const coemb::LabelSpace& labels, const std::string& attr,
                           const std::string& value) {
    const std::size_t k = find_attribute(labels, attr);
    auto v = labels.attributes[k].value_index(value);
    if (!v) throw coemb::DataError("unknown value \"" + value + "\" for attribute \"" + attr + "\"");
    return coemb::Term::attribute_value(k, *v);
}

double parse_concentration(const std::string& s) {
    if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        throw coemb::UsageError("invalid --concentration \"" + s + "\"");
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cooperative instance/attribute/category embeddings"};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "Worker threads for evaluation and graph building")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    // synth
    coemb::SynthConfig synth;
    std::string synth_out, concentration = "20";
    long ordered_attribute = 0;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
    add_config_flag(synth_cmd);
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
    synth_cmd->add_option("--values", synth.values_per_attribute, "Values per attribute")
        ->delimiter(',')
        ->capture_default_str();
    synth_cmd->add_option("--ordered-attribute", ordered_attribute, "Index of the ordered attribute, -1 for none")
        ->capture_default_str();
    synth_cmd->add_option("--categories", synth.categories)->capture_default_str();
    synth_cmd->add_option("--train-instances", synth.train_instances)->capture_default_str();
    synth_cmd->add_option("--test-instances", synth.test_instances)->capture_default_str();
    synth_cmd->add_option("--images-per-instance", synth.images_per_instance)->capture_default_str();
    synth_cmd->add_option("--feature-dim", synth.feature_dim)->capture_default_str();
    synth_cmd->add_option("--prototype-dim", synth.prototype_dim)->capture_default_str();
    synth_cmd->add_option("--noise-std", synth.noise_std)->capture_default_str();
    synth_cmd->add_option("--jitter-std", synth.jitter_std)->capture_default_str();
    synth_cmd->add_option("--nuisance-dim", synth.nuisance_dim)->capture_default_str();
    synth_cmd->add_option("--nuisance-std", synth.nuisance_std)->capture_default_str();
    synth_cmd->add_option("--concentration", concentration, "Preference for a category's values (or inf)")
        ->capture_default_str();

    // corrupt
    DataPaths corrupt_data;
    double fraction = 0.0;
    std::string corrupt_mode = "absence", corrupt_out;
    std::uint64_t corrupt_seed = 0;
    auto* corrupt_cmd = app.add_subcommand("corrupt", "Corrupt one attribute of a fraction of train instances");
    add_config_flag(corrupt_cmd);
    corrupt_data.add(corrupt_cmd);
    corrupt_cmd->add_option("--fraction", fraction, "Fraction of train instances to corrupt")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    corrupt_cmd->add_option("--mode", corrupt_mode)
        ->check(CLI::IsMember({"absence", "swap", "both"}))
        ->capture_default_str();
    corrupt_cmd->add_option("--seed", corrupt_seed)->capture_default_str();
    corrupt_cmd->add_option("--out", corrupt_out, "Output directory")->required();

    // train
    DataPaths train_data;
    coemb::TrainConfig tc;
    std::size_t subspace_width = 50;
    std::string checkpoint_out, log_out;
    bool fixed_instance = false, fixed_attribute = false;
    auto* train_cmd = app.add_subcommand("train", "Train projector and proxies");
    add_config_flag(train_cmd);
    train_data.add(train_cmd);
    train_cmd->add_option("--checkpoint", checkpoint_out, "Output checkpoint")->required();
    train_cmd->add_option("--log", log_out, "Loss log (CSV)");
    train_cmd->add_option("--subspace-width", subspace_width, "Dimensions per attribute subspace")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train_cmd->add_option("--epochs", tc.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    train_cmd->add_option("--batch-size", tc.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    train_cmd->add_option("--lr", tc.base_lr)->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--beta1", tc.adam.beta1)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    train_cmd->add_option("--beta2", tc.adam.beta2)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    train_cmd->add_option("--adam-eps", tc.adam.epsilon)->check(CLI::PositiveNumber)->capture_default_str();
    train_cmd->add_option("--weight-decay", tc.weight_decay)->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--proxy-lr-mult", tc.proxy_lr_multiplier)->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--lambda-ins", tc.weights.instance)->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--lambda-attr", tc.weights.attribute)->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--lambda-cat", tc.weights.category)->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--lambda-reg", tc.weights.regularization)->check(CLI::NonNegativeNumber)->capture_default_str();
    train_cmd->add_option("--lambda-order", tc.weights.order, "Weight of the proxy ordering term (0 disables)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    train_cmd->add_option("--sigma", tc.sigma, "Rank kernel width for ordered attributes")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    train_cmd->add_option("--seed", tc.seed)->capture_default_str();
    train_cmd->add_flag("--fixed-instance-proxies", fixed_instance, "Freeze instance proxies at initialization");
    train_cmd->add_flag("--fixed-attribute-proxies", fixed_attribute, "Freeze attribute proxies at initialization");
    train_cmd->add_flag("--renormalize-missing", tc.renormalize_missing_attributes,
                        "Average attribute losses over exhibited attributes instead of all K");

    // eval
    DataPaths eval_data;
    std::string eval_ckpt, eval_out;
    std::size_t recall_k = 1;
    auto* eval_cmd = app.add_subcommand("eval", "Compute retrieval metrics on the test splits");
    add_config_flag(eval_cmd);
    eval_data.add(eval_cmd);
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--report", eval_out, "Output JSON (stdout if omitted)");
    eval_cmd->add_option("--recall-k", recall_k)->check(CLI::PositiveNumber)->capture_default_str();

    // retrieve
    DataPaths retrieve_data;
    std::string retrieve_ckpt, retrieve_out, q_item, q_attr, q_value, q_cat;
    std::size_t top = 10;
    auto* retrieve_cmd = app.add_subcommand("retrieve", "Rank the gallery for one query image or term");
    add_config_flag(retrieve_cmd);
    retrieve_data.add(retrieve_cmd);
    retrieve_cmd->add_option("--checkpoint", retrieve_ckpt)->required();
    auto* o_item = retrieve_cmd->add_option("--item", q_item, "Query image id (any split)");
    auto* o_attr = retrieve_cmd->add_option("--attribute", q_attr, "Attribute of a term query");
    auto* o_value = retrieve_cmd->add_option("--value", q_value, "Attribute value of a term query");
    auto* o_cat = retrieve_cmd->add_option("--category", q_cat, "Category term query");
    o_item->excludes(o_attr)->excludes(o_cat);
    o_cat->excludes(o_attr);
    o_attr->needs(o_value);
    o_value->needs(o_attr);
    retrieve_cmd->add_option("--top", top)->check(CLI::PositiveNumber)->capture_default_str();
    retrieve_cmd->add_option("--out", retrieve_out, "Output JSON (stdout if omitted)");

    // transition
    DataPaths transition_data;
    std::string tr_ckpt, tr_out, tr_source, tr_target, tr_target_cat, tr_target_attr, tr_target_value, tr_subspace;
    std::size_t graph_k = 5;
    auto* transition_cmd = app.add_subcommand("transition", "Shortest path between gallery images in a kNN graph");
    add_config_flag(transition_cmd);
    transition_data.add(transition_cmd);
    transition_cmd->add_option("--checkpoint", tr_ckpt)->required();
    transition_cmd->add_option("--source", tr_source, "Source gallery image id")->required();
    auto* t_item = transition_cmd->add_option("--target", tr_target, "Target gallery image id");
    auto* t_cat = transition_cmd->add_option("--target-category", tr_target_cat, "Go to the category's center");
    auto* t_attr = transition_cmd->add_option("--target-attribute", tr_target_attr, "Go to an attribute value's center");
    auto* t_value = transition_cmd->add_option("--target-value", tr_target_value);
    t_item->excludes(t_cat)->excludes(t_attr);
    t_cat->excludes(t_attr);
    t_attr->needs(t_value);
    t_value->needs(t_attr);
    transition_cmd->add_option("--k", graph_k, "Neighbours per node")->check(CLI::PositiveNumber)->capture_default_str();
    transition_cmd->add_option("--subspace", tr_subspace, "Build the graph in this attribute's subspace");
    transition_cmd->add_option("--out", tr_out, "Output JSON (stdout if omitted)");

    // typicality
    DataPaths typ_data;
    std::string typ_ckpt, typ_out, typ_cat, typ_subspace;
    auto* typ_cmd = app.add_subcommand("typicality", "Rank a category's gallery images by distance to its center");
    add_config_flag(typ_cmd);
    typ_data.add(typ_cmd);
    typ_cmd->add_option("--checkpoint", typ_ckpt)->required();
    typ_cmd->add_option("--category", typ_cat)->required();
    typ_cmd->add_option("--subspace", typ_subspace, "Measure distances in this attribute's subspace");
    typ_cmd->add_option("--out", typ_out, "Output JSON (stdout if omitted)");

    std::vector<std::string> args;
    try {
        std::set<std::string> names;
        for (const CLI::App* sub : app.get_subcommands({})) names.insert(sub->get_name());
        args = expand_config(argc, argv, names);
    } catch (const coemb::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ExitCode::data;
    }
    std::vector<char*> raw;
    for (auto& a : args) raw.push_back(a.data());

    try {
        app.parse(static_cast<int>(raw.size()), raw.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        const auto active = app.get_subcommands();
        std::cerr << '\n' << (active.empty() ? app.help() : active.front()->help());
        return ExitCode::usage;
    }

    try {
        if (*synth_cmd) {
            synth.ordered_attribute =
                ordered_attribute < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(ordered_attribute));
            synth.concentration = parse_concentration(concentration);
            const auto result = coemb::generate(synth);
            coemb::write_synth(synth, result, synth_out);
        } else if (*corrupt_cmd) {
            const auto ds = corrupt_data.load();
            const auto out = coemb::corrupt_attributes(ds, fraction, coemb::parse_corruption_mode(corrupt_mode),
                                                       corrupt_seed);
            fs::create_directories(corrupt_out);
            coemb::save_dataset(out, fs::path(corrupt_out) / "manifest.json", fs::path(corrupt_out) / "features.cefv");
        } else if (*train_cmd) {
            const auto ds = train_data.load();
            tc.learn_instance_proxies = !fixed_instance;
            tc.learn_attribute_proxies = !fixed_attribute;
            const coemb::EmbeddingConfig config(ds.labels.attribute_count(), subspace_width);
            const auto result = coemb::train(ds, config, tc, [&](std::size_t epoch, double loss) {
                std::cerr << "epoch " << epoch << " loss " << loss << '\n';
            });
            coemb::save_checkpoint(result.checkpoint, checkpoint_out);
            if (!log_out.empty()) coemb::emit_loss_log(result.log, log_out);
        } else if (*eval_cmd) {
            const auto ds = eval_data.load();
            const auto ckpt = coemb::load_checkpoint(eval_ckpt);
            const auto report = coemb::evaluate(ckpt, ds, {recall_k, threads});
            const auto& md = ckpt.metadata;
            Json echo;
            echo["checkpoint"] = eval_ckpt;
            echo["superspace_dim"] = ckpt.config.superspace_dim();
            echo["subspace_width"] = ckpt.config.subspace_width();
            echo["epochs"] = md.epochs;
            echo["weights"] = {{"instance", md.weights.instance},
                               {"attribute", md.weights.attribute},
                               {"category", md.weights.category},
                               {"regularization", md.weights.regularization},
                               {"order", md.weights.order}};
            echo["sigma"] = md.sigma;
            write_or_print(coemb::to_json(report, echo), eval_out);
        } else if (*retrieve_cmd) {
            const auto ds = retrieve_data.load();
            const auto ckpt = coemb::load_checkpoint(retrieve_ckpt);
            const auto gallery = coemb::build_index(ckpt, ds, coemb::Split::gallery);
            coemb::Vector query;
            std::optional<std::size_t> block;
            if (!q_item.empty()) {
                const auto it = std::find_if(ds.items.begin(), ds.items.end(),
                                             [&](const coemb::Item& i) { return i.item_id == q_item; });
                if (it == ds.items.end()) throw coemb::DataError("unknown item \"" + q_item + "\"");
                const auto index = coemb::build_index(ckpt, ds, it->split);
                query = index.embeddings.row(static_cast<Eigen::Index>(find_entry(index, q_item))).transpose();
            } else if (!q_attr.empty() || !q_cat.empty()) {
                const auto train = coemb::build_index(ckpt, ds, coemb::Split::train);
                const auto term = q_cat.empty() ? attribute_term(ds.labels, q_attr, q_value)
                                                : coemb::Term::category_of(find_category(ds.labels, q_cat));
                query = coemb::build_term_query(train, term);
                block = term.block();
            } else {
                throw coemb::UsageError("retrieve needs --item, --category or --attribute/--value");
            }
            const auto dist = coemb::distances_to(gallery.embeddings, query, gallery.config, block);
            const auto order = coemb::rank_by_distance(dist);
            Json results = Json::array();
            for (std::size_t r = 0; r < std::min(top, order.size()); ++r)
                results.push_back({{"item_id", gallery.item_ids[order[r]]}, {"distance", std::sqrt(dist[order[r]])}});
            write_or_print(Json{{"results", std::move(results)}}, retrieve_out);
        } else if (*transition_cmd) {
            const auto ds = transition_data.load();
            const auto ckpt = coemb::load_checkpoint(tr_ckpt);
            const auto gallery = coemb::build_index(ckpt, ds, coemb::Split::gallery);
            std::optional<std::size_t> block;
            if (!tr_subspace.empty()) block = find_attribute(ds.labels, tr_subspace);
            const auto graph = coemb::build_knn_graph(gallery, graph_k, block, threads);
            const std::size_t source = find_entry(gallery, tr_source);
            coemb::Destination dest;
            if (!tr_target.empty())
                dest = coemb::Destination::item(find_entry(gallery, tr_target));
            else if (!tr_target_cat.empty())
                dest = coemb::Destination::center_of(coemb::Term::category_of(find_category(ds.labels, tr_target_cat)));
            else if (!tr_target_attr.empty())
                dest = coemb::Destination::center_of(attribute_term(ds.labels, tr_target_attr, tr_target_value));
            else
                throw coemb::UsageError("transition needs --target, --target-category or --target-attribute/--target-value");
            write_or_print(coemb::to_json(coemb::transition(gallery, graph, source, dest)), tr_out);
        } else if (*typ_cmd) {
            const auto ds = typ_data.load();
            const auto ckpt = coemb::load_checkpoint(typ_ckpt);
            const auto gallery = coemb::build_index(ckpt, ds, coemb::Split::gallery);
            std::optional<std::size_t> block;
            if (!typ_subspace.empty()) block = find_attribute(ds.labels, typ_subspace);
            const auto ranking = coemb::typicality_ranking(gallery, find_category(ds.labels, typ_cat), block);
            write_or_print(Json{{"category", typ_cat}, {"ranking", coemb::to_json(ranking)}}, typ_out);
        }
    } catch (const coemb::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return ExitCode::usage;
    } catch (const coemb::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return ExitCode::numeric;
    } catch (const coemb::NoPathError& e) {
        std::cerr << "no path: " << e.what() << '\n';
        return ExitCode::data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ExitCode::data;
    }
    return ExitCode::ok;
}
