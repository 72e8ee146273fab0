#include "crossrec/features.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "crossrec/error.hpp"

namespace crossrec {

Eigen::VectorXd FeatureStore::get(const std::string& item_id) const {
    auto it = table.find(item_id);
    if (it != table.end()) return it->second;
    if (missing_policy == MissingPolicy::reject)
        throw errors::missing_item("no feature vector for item '" + item_id + "'");
    std::cerr << "warning: no feature vector for item '" << item_id
              << "', zero-filling\n";
    return Eigen::VectorXd::Zero(dim);
}

void FeatureStore::insert(const std::string& item_id, const Eigen::VectorXd& v) {
    if (v.size() != dim)
        throw errors::dimension_mismatch("item '" + item_id + "' has " +
                                         std::to_string(v.size()) +
                                         " values, store dim is " +
                                         std::to_string(dim));
    if (!v.allFinite())
        throw errors::non_finite_value("item '" + item_id + "' has a non-finite entry");
    if (!table.emplace(item_id, v).second)
        throw errors::duplicate_item("item '" + item_id + "' appears twice");
}

FeatureStore load_feature_table(const std::string& path, MissingPolicy policy) {
    std::ifstream in(path);
    if (!in) throw errors::io_failure("cannot open " + path);

    std::string header;
    if (!std::getline(in, header) || header.rfind("dim=", 0) != 0)
        throw errors::malformed_record(path + ":1: expected 'dim=<k>' header");

    FeatureStore store;
    store.missing_policy = policy;
    try {
        store.dim = std::stoi(header.substr(4));
    } catch (const std::exception&) {
        throw errors::malformed_record(path + ":1: bad dimension '" + header + "'");
    }
    if (store.dim < 0)
        throw errors::malformed_record(path + ":1: negative dimension");

    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw errors::malformed_record(path + ":" + std::to_string(lineno) +
                                           ": expected item_id<TAB>values");
        std::string id = line.substr(0, tab);

        std::vector<double> values;
        std::stringstream vs(line.substr(tab + 1));
        std::string tok;
        while (std::getline(vs, tok, ',')) {
            try {
                std::size_t used = 0;
                double v = std::stod(tok, &used);
                if (used != tok.size()) throw std::invalid_argument(tok);
                values.push_back(v);
            } catch (const std::exception&) {
                throw errors::malformed_record(path + ":" + std::to_string(lineno) +
                                               ": bad value '" + tok + "'");
            }
        }
        if (static_cast<int>(values.size()) != store.dim)
            throw errors::dimension_mismatch(
                "item '" + id + "' has " + std::to_string(values.size()) +
                " values, header says dim=" + std::to_string(store.dim));
        Eigen::VectorXd v = Eigen::Map<Eigen::VectorXd>(values.data(), values.size());
        if (!v.allFinite())
            throw errors::non_finite_value("item '" + id + "' has a non-finite entry");
        if (!store.table.emplace(id, std::move(v)).second)
            throw errors::duplicate_item("item '" + id + "' appears twice in " + path);
    }
    return store;
}

void write_feature_table(const FeatureStore& store, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw errors::io_failure("cannot write " + path);
    out << "dim=" << store.dim << '\n';
    char buf[40];
    for (const auto& [id, v] : store.table) {  // std::map: sorted by id
        out << id << '\t';
        for (int k = 0; k < v.size(); ++k) {
            // %.17g round-trips doubles exactly, so write->load->write is
            // byte-stable.
            std::snprintf(buf, sizeof buf, "%.17g", v[k]);
            if (k) out << ',';
            out << buf;
        }
        if (v.size() == 0) out << "";
        out << '\n';
    }
    if (!out) throw errors::io_failure("write failed for " + path);
}

FeatureMatrix FeatureMatrix::resolve(const FeatureStore& store,
                                     const std::vector<std::string>& vocab) {
    FeatureMatrix fm;
    fm.dim = store.dim;
    fm.rows.resize(static_cast<Eigen::Index>(vocab.size()), store.dim);
    for (std::size_t i = 0; i < vocab.size(); ++i)
        fm.rows.row(static_cast<Eigen::Index>(i)) = store.get(vocab[i]).transpose();
    return fm;
}

FeatureMatrix FeatureMatrix::none(std::size_t vocab_size) {
    FeatureMatrix fm;
    fm.dim = 0;
    fm.rows.resize(static_cast<Eigen::Index>(vocab_size), 0);
    return fm;
}

}  // namespace crossrec
