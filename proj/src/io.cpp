#include "metastab/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace metastab {

namespace {

using json = nlohmann::json;

[[noreturn]] void parse_error(const std::string& what) { throw Error(ErrorCode::ParseError, what); }

json parse_json(std::string_view text) {
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        parse_error(std::string("invalid JSON: ") + e.what());
    }
}

std::vector<std::string> label_list(const json& j, const std::string& where) {
    if (!j.is_array()) parse_error(where + " must be an array of labels");
    std::vector<std::string> out;
    out.reserve(j.size());
    for (const auto& item : j) {
        if (!item.is_string()) parse_error(where + " must contain strings only");
        out.push_back(item.get<std::string>());
    }
    return out;
}

Partition partition_from_json(const Chain& chain, const json& j) {
    if (!j.is_object()) parse_error("partition must be an object");
    for (const auto& [key, _] : j.items()) {
        if (key != "valleys" && key != "delta") parse_error("unknown partition key '" + key + "'");
    }
    if (!j.contains("valleys")) parse_error("partition needs \"valleys\"");
    const auto& v = j.at("valleys");
    if (!v.is_array()) parse_error("partition.valleys must be an array");
    std::vector<std::vector<std::string>> valleys;
    for (std::size_t k = 0; k < v.size(); ++k) {
        valleys.push_back(label_list(v[k], "partition.valleys[" + std::to_string(k) + "]"));
    }
    std::optional<std::vector<std::string>> delta;
    if (j.contains("delta")) delta = label_list(j.at("delta"), "partition.delta");
    return Partition::from_labels(chain, valleys, delta);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

ChainSpec parse_chain_spec(std::string_view text) {
    const json doc = parse_json(text);
    if (!doc.is_object()) parse_error("chain spec must be a JSON object");
    for (const auto& [key, _] : doc.items()) {
        if (key != "states" && key != "rates" && key != "partition") {
            parse_error("unknown chain-spec key '" + key + "'");
        }
    }
    if (!doc.contains("states")) parse_error("chain spec needs \"states\"");
    if (!doc.contains("rates")) parse_error("chain spec needs \"rates\"");
    auto labels = label_list(doc.at("states"), "states");

    const auto& r = doc.at("rates");
    if (!r.is_array()) parse_error("rates must be an array");
    std::vector<RateTriple> rates;
    rates.reserve(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) {
        const auto& t = r[k];
        const std::string where = "rates[" + std::to_string(k) + "]";
        if (!t.is_array() || t.size() != 3) parse_error(where + " must be [from, to, rate]");
        if (!t[0].is_string() || !t[1].is_string()) parse_error(where + ": labels must be strings");
        if (!t[2].is_number()) parse_error(where + ": rate must be a number");
        rates.push_back({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<double>()});
    }

    ChainSpec spec{Chain::build(std::move(labels), rates), std::nullopt};
    if (doc.contains("partition")) spec.partition = partition_from_json(spec.chain, doc.at("partition"));
    return spec;
}

Partition parse_partition(const Chain& chain, std::string_view text) {
    const json doc = parse_json(text);
    if (doc.is_object() && doc.contains("partition") && doc.size() == 1) {
        return partition_from_json(chain, doc.at("partition"));
    }
    return partition_from_json(chain, doc);
}

std::string emit_chain_spec(const Chain& chain, const std::optional<Partition>& partition) {
    json doc = json::object();
    doc["states"] = chain.labels();
    json rates = json::array();
    for (Index x = 0; x < chain.size(); ++x) {
        for (const auto& t : chain.transitions(x)) {
            rates.push_back(json::array({chain.label(x), chain.label(t.to), t.rate}));
        }
    }
    doc["rates"] = std::move(rates);
    if (partition) {
        json valleys = json::array();
        for (const auto& v : partition->valleys()) {
            json labels = json::array();
            for (Index x : v) labels.push_back(chain.label(x));
            valleys.push_back(std::move(labels));
        }
        json delta = json::array();
        for (Index x : partition->delta()) delta.push_back(chain.label(x));
        doc["partition"] = {{"valleys", std::move(valleys)}, {"delta", std::move(delta)}};
    }
    return doc.dump();
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fingerprint(const Chain& chain, const std::optional<Partition>& partition) {
    return "fnv1a64:" + hex64(fnv1a64(emit_chain_spec(chain, partition)));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) parse_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace metastab
