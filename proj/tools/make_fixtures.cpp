// Regenerates the bundled toy datasets, the toy replay fixture, and the WDC-small test fixtures.
// Usage: make_fixtures <repo root>

#include <algorithm>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "emtune/curation.hpp"
#include "emtune/datamodel.hpp"
#include "emtune/gateway.hpp"
#include "emtune/promptforge.hpp"

using namespace emtune;

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[pick(rng, v.size())];
}

template <class T>
void shuffle(Rng& rng, std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[pick(rng, i)]);
}

const std::vector<std::string> kBrands = {"Logitech", "Corsair", "Sandisk", "Kingston", "Samsung", "Anker",
                                          "Belkin",   "Razer",   "Sony",    "Philips",  "Asus",    "Netgear"};
const std::vector<std::string> kKinds = {"wireless mouse", "mechanical keyboard", "usb-c hub",     "portable ssd",
                                         "microsd card",   "gaming headset",      "power bank",    "wifi router",
                                         "hdmi cable",     "webcam",              "monitor stand", "bluetooth speaker"};
const std::vector<std::string> kColors = {"black", "white", "grey", "blue", "red", "silver"};
const std::vector<std::string> kSizes = {"32gb", "64gb", "128gb", "256gb", "512gb", "1tb", "2tb"};

struct Product {
    std::string brand, kind, model, color, size;
    int price = 0;
};

Product random_product(Rng& rng) {
    Product p;
    p.brand = pick(rng, kBrands);
    p.kind = pick(rng, kKinds);
    p.model = fmt::format("{}{}-{}", static_cast<char>('A' + pick(rng, 26)), static_cast<char>('A' + pick(rng, 26)),
                          100 + pick(rng, 900));
    p.color = pick(rng, kColors);
    p.size = pick(rng, kSizes);
    p.price = 10 + static_cast<int>(pick(rng, 190));
    return p;
}

// Same brand and kind, different model: the hard negatives.
Product sibling(Rng& rng, const Product& p) {
    Product q = random_product(rng);
    q.brand = p.brand;
    q.kind = p.kind;
    q.color = p.color;
    if (pick(rng, 2)) q.size = p.size;
    if (pick(rng, 2)) q.price = p.price;
    return q;
}

// One offer's title for a product; offers of the same product differ in word order and detail.
std::string offer_title(Rng& rng, const Product& p) {
    std::vector<std::string> words = {p.brand, p.kind, p.model};
    if (pick(rng, 3)) words.push_back(p.size);
    if (pick(rng, 2)) words.push_back(p.color);
    if (pick(rng, 3) == 0) std::swap(words[1], words[2]);
    if (pick(rng, 4) == 0) words.erase(words.begin());
    if (pick(rng, 4) == 0) words.push_back(pick(rng, std::vector<std::string>{"new", "retail", "oem", "2-pack"}));
    if (pick(rng, 5) == 0)
        words.push_back(pick(rng, std::vector<std::string>{"for laptop and pc", "with travel case", "2024 edition"}));
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
}

std::string offer_price(Rng& rng, const Product& p) {
    const int cents = static_cast<int>(pick(rng, 2)) ? 99 : 49;
    return fmt::format("{}.{:02d}", p.price + static_cast<int>(pick(rng, 5)) - 2, cents);
}

EntityRecord product_record(Rng& rng, const Product& p, const std::string& id, bool with_brand_price) {
    EntityRecord r;
    r.id = id;
    r.set("title", offer_title(rng, p));
    if (with_brand_price) {
        r.set("brand", pick(rng, 5) == 0 ? "" : p.brand);
        r.set("price", offer_price(rng, p));
    }
    return r;
}

std::vector<CandidatePair> product_pairs(Rng& rng, const std::string& prefix, std::size_t pos, std::size_t neg,
                                         std::size_t& counter, bool with_brand_price, bool hard = false) {
    std::vector<CandidatePair> out;
    for (std::size_t i = 0; i < pos + neg; ++i) {
        const bool match = i < pos;
        const Product a = random_product(rng);
        const Product b = match ? a : (hard || pick(rng, 3) ? sibling(rng, a) : random_product(rng));
        const std::size_t n = counter++;
        CandidatePair cp;
        cp.left = product_record(rng, a, fmt::format("{}{}L", prefix, n), with_brand_price);
        cp.right = product_record(rng, b, fmt::format("{}{}R", prefix, n), with_brand_price);
        cp.label = match ? Label::Match : Label::NonMatch;
        out.push_back(std::move(cp));
    }
    shuffle(rng, out);
    return out;
}

const std::vector<std::string> kSurnames = {"Chen",  "Garcia", "Müller", "Kumar", "Rossi", "Smith",
                                            "Tanaka", "Novak", "Silva", "Dubois", "Kowalski", "Haddad"};
const std::vector<std::string> kTopics = {"query optimization", "entity resolution", "stream processing",
                                          "index structures",  "data cleaning",     "schema matching",
                                          "graph databases",   "transaction logs",  "spatial joins"};
const std::vector<std::string> kVenues = {"SIGMOD", "VLDB", "ICDE", "EDBT", "CIKM"};

struct Paper {
    std::string authors, title, venue;
    int year = 2000;
};

Paper random_paper(Rng& rng) {
    Paper p;
    p.authors = fmt::format("{}, {}", pick(rng, kSurnames), pick(rng, kSurnames));
    p.title = fmt::format("{} {} for {}", pick(rng, std::vector<std::string>{"Efficient", "Scalable", "Adaptive", "Robust"}),
                          pick(rng, kTopics), pick(rng, kTopics));
    p.venue = pick(rng, kVenues);
    p.year = 1995 + static_cast<int>(pick(rng, 28));
    return p;
}

EntityRecord paper_record(Rng& rng, const Paper& p, const std::string& id) {
    EntityRecord r;
    r.id = id;
    r.set("authors", pick(rng, 3) == 0 ? p.authors.substr(0, p.authors.find(',')) : p.authors);
    std::string title = p.title;
    if (pick(rng, 3) == 0) title = title.substr(title.find(' ') + 1);
    r.set("title", title);
    r.set("venue", pick(rng, 3) == 0 ? to_lower(p.venue) : p.venue);
    r.set("year", pick(rng, 4) == 0 ? "" : std::to_string(p.year));
    return r;
}

std::vector<CandidatePair> paper_pairs(Rng& rng, std::size_t pos, std::size_t neg) {
    std::vector<CandidatePair> out;
    for (std::size_t i = 0; i < pos + neg; ++i) {
        const bool match = i < pos;
        const Paper a = random_paper(rng);
        Paper b = a;
        if (!match) {
            b = random_paper(rng);
            b.venue = a.venue;
            if (pick(rng, 2)) b.authors = a.authors;
            if (pick(rng, 2)) b.year = a.year;
        }
        CandidatePair cp;
        cp.left = paper_record(rng, a, fmt::format("d{}", i));
        cp.right = paper_record(rng, b, fmt::format("s{}", i));
        cp.label = match ? Label::Match : Label::NonMatch;
        out.push_back(std::move(cp));
    }
    shuffle(rng, out);
    return out;
}

// Offline stand-in for a structured explanation: token overlap per attribute, fixed importances.
StructuredExplanation toy_explanation(const CandidatePair& p) {
    static const std::map<std::string, double> importance = {{"title", 0.9}, {"brand", 0.6}, {"price", 0.3}};
    StructuredExplanation e;
    for (const auto& [name, left] : p.left.attributes) {
        const std::string* right = p.right.find(name);
        AttributeComparison c;
        c.attribute = name;
        c.value_left = left;
        c.value_right = right ? *right : "";
        c.similarity = round_half_away(jaccard(alnum_tokens(c.value_left), alnum_tokens(c.value_right)), 2);
        c.importance = importance.count(name) ? importance.at(name) : 0.5;
        e.comparisons.push_back(std::move(c));
    }
    e.decision = p.label;
    return e;
}

void write_toy(const fs::path& root) {
    Rng rng(20250101);
    std::size_t counter = 0;
    const fs::path toy = root / "data" / "toy";

    Dataset a;
    a.name = "toy-products";
    a.domain = "product";
    a.schema = {"title", "brand", "price"};
    a.serialization = SerializationRule::concat(a.schema);
    a.splits["train"] = product_pairs(rng, "a", 12, 24, counter, true);
    a.splits["validation"] = product_pairs(rng, "a", 4, 8, counter, true);
    a.splits["test"] = product_pairs(rng, "a", 4, 8, counter, true);
    write_dataset(a, toy / "toy-products");

    Dataset b;
    b.name = "toy-products-b";
    b.domain = "product";
    b.schema = {"title"};
    b.serialization = SerializationRule::single("title");
    b.splits["test"] = product_pairs(rng, "b", 6, 14, counter, false, true);
    write_dataset(b, toy / "toy-products-b");

    Dataset s;
    s.name = "toy-scholar";
    s.domain = "scholar";
    s.schema = {"authors", "title", "venue", "year"};
    s.serialization = SerializationRule::concat(s.schema);
    s.splits["test"] = paper_pairs(rng, 6, 14);
    write_dataset(s, toy / "toy-scholar");

    // Replay responses for the structured explanation requests. Pair 5 first answers without a
    // decision line and is fixed on regeneration; pair 9 always contradicts its label and ends
    // up excluded.
    const Dataset loaded = load_dataset(toy / "toy-products" / "manifest.json");
    const auto& train = loaded.split("train");
    std::vector<json> rows;
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& p = train[i];
        const std::string hash =
            request_hash(render_explanation_request(p, loaded.serialization, ExplanationStyle::Structured));
        StructuredExplanation e = toy_explanation(p);
        const std::string good = "Attribute comparison:\n" + render_structured_block(e);
        if (i == 5) {
            std::string broken = good.substr(0, good.find("decision:")) + "```";
            rows.push_back({{"hash", hash}, {"response", broken}});
        }
        if (i == 9) e.decision = e.decision == Label::Match ? Label::NonMatch : Label::Match;
        rows.push_back({{"hash", hash}, {"response", i == 9 ? render_structured_block(e) : good}});
    }
    write_jsonl(toy / "explanations.replay.jsonl", rows);
    std::cout << fmt::format("toy: {} pairs, {} replay rows\n", 60 + 20 + 20, rows.size());
}

void write_wdc_small(const fs::path& root) {
    Rng rng(2500);
    std::size_t counter = 0;
    const fs::path dir = root / "tests" / "data" / "wdc-small";

    Dataset d;
    d.name = "wdc-small";
    d.domain = "product";
    d.schema = {"title"};
    d.serialization = SerializationRule::single("title");
    d.splits["train"] = product_pairs(rng, "w", 500, 2000, counter, false);
    write_dataset(d, dir);

    const auto& train = d.split("train");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < train.size(); ++i) (train[i].label == Label::Match ? pos : neg).push_back(i);

    // 55 of the positives and 439 of the negatives are answered wrongly or not at all.
    std::vector<bool> wrong(train.size(), false);
    shuffle(rng, pos);
    shuffle(rng, neg);
    for (std::size_t k = 0; k < 55; ++k) wrong[pos[k]] = true;
    for (std::size_t k = 0; k < 439; ++k) wrong[neg[k]] = true;

    const std::vector<std::string> yes = {"Yes.", "Yes", "yes, both offers describe the same product.",
                                         "YES - same model number."};
    const std::vector<std::string> no = {"No.", "No", "no, the model numbers differ.", "No. Different products."};
    const std::vector<std::string> unparsed = {"I cannot tell from the titles alone.", "Not enough information.",
                                               "The offers are ambiguous."};
    std::vector<json> preds;
    std::size_t unparsed_count = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        const bool match = train[i].label == Label::Match;
        std::string raw;
        if (wrong[i] && pick(rng, 10) == 0) {
            raw = pick(rng, unparsed);
            ++unparsed_count;
        } else {
            raw = (match != wrong[i]) ? pick(rng, yes) : pick(rng, no);
        }
        preds.push_back(make_prediction(PairRef{d.name, "train", i}, raw, train[i].label).to_json());
    }
    write_jsonl(dir / "predictions.jsonl", preds);

    // Relevancy judgments keep 442 positives and 166 negatives.
    std::vector<bool> keep(train.size(), false);
    shuffle(rng, pos);
    shuffle(rng, neg);
    for (std::size_t k = 0; k < 442; ++k) keep[pos[k]] = true;
    for (std::size_t k = 0; k < 166; ++k) keep[neg[k]] = true;
    const std::vector<std::string> keep_raw = {"Keep", "keep", "KEEP: informative pair", "Yes, keep this pair."};
    const std::vector<std::string> drop_raw = {"Discard", "discard - redundant", "No.", "Unclear."};
    std::vector<json> judgments;
    for (std::size_t i = 0; i < train.size(); ++i)
        judgments.push_back(
            parse_relevancy(PairRef{d.name, "train", i}, keep[i] ? pick(rng, keep_raw) : pick(rng, drop_raw)).to_json());
    write_jsonl(dir / "judgments.jsonl", judgments);
    std::cout << fmt::format("wdc-small: {} pairs, {} unparsed predictions\n", train.size(), unparsed_count);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixtures <repo root>\n";
        return 2;
    }
    try {
        write_toy(argv[1]);
        write_wdc_small(argv[1]);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
