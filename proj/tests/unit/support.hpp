#pragma once

#include <atomic>
#include <random>
#include <string>

#include <unistd.h>

#include "emtune/datamodel.hpp"

namespace emtune::testing {

inline fs::path source_path(const std::string& rel) { return fs::path(EMTUNE_SOURCE_DIR) / rel; }

/// Directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() / ("emtune-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline EntityRecord record(std::string id, std::vector<std::pair<std::string, std::string>> attrs) {
    EntityRecord r;
    r.id = std::move(id);
    r.attributes = std::move(attrs);
    return r;
}

/// Single-attribute "title" pair.
inline CandidatePair title_pair(const std::string& id, const std::string& left, const std::string& right, Label label) {
    CandidatePair p;
    p.left = record(id + "L", {{"title", left}});
    p.right = record(id + "R", {{"title", right}});
    p.label = label;
    return p;
}

inline Dataset title_dataset(std::string name, std::vector<CandidatePair> train) {
    Dataset d;
    d.name = std::move(name);
    d.domain = "product";
    d.schema = {"title"};
    d.serialization = SerializationRule::single("title");
    d.splits["train"] = std::move(train);
    return d;
}

inline std::string random_word(std::mt19937_64& rng, std::size_t max_len = 8) {
    static const std::string letters = "abcdefghijklmnopqrstuvwxyz0123456789";
    const std::size_t n = 1 + rng() % max_len;
    std::string w;
    for (std::size_t i = 0; i < n; ++i) w += letters[rng() % letters.size()];
    return w;
}

}  // namespace emtune::testing
