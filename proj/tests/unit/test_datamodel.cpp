#include <doctest.h>

#include <random>

#include "emtune/csv.hpp"
#include "emtune/datamodel.hpp"
#include "emtune/error.hpp"
#include "support.hpp"

using namespace emtune;
using namespace emtune::testing;

namespace {

DatasetConfig canonical_config(const std::vector<std::string>& schema) {
    DatasetConfig cfg;
    cfg.name = "t";
    cfg.schema = schema;
    cfg.serialization = schema.size() == 1 ? SerializationRule::single(schema[0]) : SerializationRule::concat(schema);
    return cfg;
}

Dataset random_dataset(std::mt19937_64& rng) {
    static const std::vector<std::string> pieces = {"a", "b,c", "quote\"d", "multi\nline", "ünï", "x y", "", "semi;colon"};
    Dataset d;
    d.name = "rand" + std::to_string(rng() % 1000);
    d.domain = rng() % 2 ? "product" : "scholar";
    const std::size_t n_attrs = 1 + rng() % 4;
    for (std::size_t a = 0; a < n_attrs; ++a) d.schema.push_back("attr" + std::to_string(a));
    d.serialization = n_attrs == 1 ? SerializationRule::single(d.schema[0]) : SerializationRule::concat(d.schema);
    for (auto split : kSplitNames) {
        if (rng() % 4 == 0) continue;
        auto& pairs = d.splits[std::string(split)];
        const std::size_t n = rng() % 12;
        for (std::size_t i = 0; i < n; ++i) {
            CandidatePair p;
            p.left.id = "l" + std::to_string(i);
            p.right.id = "r" + std::to_string(i);
            for (const auto& attr : d.schema) {
                std::string lv = pieces[rng() % pieces.size()] + random_word(rng);
                std::string rv = rng() % 5 == 0 ? "" : random_word(rng) + pieces[rng() % pieces.size()];
                p.left.attributes.emplace_back(attr, trim(lv));
                p.right.attributes.emplace_back(attr, trim(rv));
            }
            p.label = rng() % 3 == 0 ? Label::Match : Label::NonMatch;
            if (rng() % 7 == 0) p.provenance = rng() % 2 ? Provenance::Synthetic : Provenance::Selected;
            pairs.push_back(std::move(p));
        }
    }
    return d;
}

}  // namespace

TEST_CASE("csv parser handles quoting, embedded newlines, and CRLF") {
    const auto rows = csv::parse("a,b\r\n\"x,1\",\"he said \"\"hi\"\"\"\n\"two\nlines\",z\n");
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].fields == csv::Row{"x,1", "he said \"hi\""});
    CHECK(rows[2].fields == csv::Row{"two\nlines", "z"});
    CHECK(rows[2].line == 3);
    CHECK(csv::format_row({"plain", "with,comma", "q\"", " edge"}) == "plain,\"with,comma\",\"q\"\"\",\" edge\"\n");
}

TEST_CASE("serialize_entity") {
    SUBCASE("single attribute is an identity projection") {
        CHECK(serialize_entity(record("1", {{"title", "skype for business"}}), SerializationRule::single("title")) ==
              "skype for business");
    }
    SUBCASE("concat joins values in declared order") {
        const auto r = record("1", {{"year", "2001"}, {"title", "T"}, {"author", "A"}, {"venue", "V"}});
        CHECK(serialize_entity(r, SerializationRule::concat({"author", "title", "venue", "year"})) == "A; T; V; 2001");
    }
    SUBCASE("empty values keep their slot") {
        const auto r = record("1", {{"author", "A"}, {"title", "T"}, {"venue", ""}, {"year", "2001"}});
        CHECK(serialize_entity(r, SerializationRule::concat({"author", "title", "venue", "year"})) == "A; T; ; 2001");
    }
    SUBCASE("a record lacking a rule attribute is rejected") {
        const auto r = record("1", {{"author", "A"}});
        CHECK_THROWS_AS(serialize_entity(r, SerializationRule::concat({"author", "title"})), SchemaError);
    }
    SUBCASE("rule must reference schema attributes") {
        CHECK_THROWS_AS(SerializationRule::concat({"title", "isbn"}).validate({"title"}), SchemaError);
        CHECK_THROWS_AS(SerializationRule::concat({"title"}, "").validate({"title"}), SchemaError);
    }
}

TEST_CASE("serialize_entity is injective on delimiter-free value tuples") {
    std::mt19937_64 rng(11);
    const auto rule = SerializationRule::concat({"a", "b", "c"});
    std::map<std::string, std::vector<std::string>> seen;
    for (int i = 0; i < 2000; ++i) {
        std::vector<std::string> values = {random_word(rng, 2), random_word(rng, 2), random_word(rng, 2)};
        if (rng() % 4 == 0) values[rng() % 3].clear();
        const auto r = record("x", {{"a", values[0]}, {"b", values[1]}, {"c", values[2]}});
        const std::string s = serialize_entity(r, rule);
        CHECK(serialize_entity(r, rule) == s);
        auto [it, inserted] = seen.emplace(s, values);
        if (!inserted) CHECK(it->second == values);
    }
}

TEST_CASE("load_dataset on the hand-counted 20-pair fixture") {
    const Dataset d = load_dataset(source_path("tests/data/pairs20/manifest.json"));
    const auto stats = dataset_stats(d);
    CHECK(stats.at("test").positive == 10);
    CHECK(stats.at("test").negative == 10);
    CHECK(stats.at("test").total == 20);
    // Mapped columns, quoting and escaped quotes survive.
    const auto& p = d.split("test")[6];
    CHECK(p.left.id == "l07");
    CHECK(*p.left.find("title") == "logitech mx revolution \"cordless\" mouse");
    CHECK(serialize_entity(d.split("test")[2].left, d.serialization) == "canon powershot sd1100, 8mp; 199.99");
    CHECK(*d.split("test")[10].right.find("price") == "");
}

TEST_CASE("WDC-small train split statistics") {
    const Dataset d = load_dataset(source_path("tests/data/wdc-small/manifest.json"));
    const auto stats = dataset_stats(d);
    CHECK(stats.at("train").positive == 500);
    CHECK(stats.at("train").negative == 2000);
    const std::string table = format_stats_table({{"WDC Products (small)", stats}});
    CHECK(table.find("500    2,000") != std::string::npos);
}

TEST_CASE("load_split errors") {
    TempDir tmp;
    auto cfg = canonical_config({"title"});

    SUBCASE("empty file with a valid header") {
        write_file(tmp / "empty.csv", "id_left,id_right,label,title_left,title_right\n");
        const auto pairs = load_split(tmp / "empty.csv", cfg);
        CHECK(pairs.empty());
        CHECK(split_counts(pairs) == SplitCounts{});
    }
    SUBCASE("missing column names the column") {
        write_file(tmp / "bad.csv", "id_left,id_right,label,title_left\n");
        try {
            load_split(tmp / "bad.csv", cfg);
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(std::string(e.what()).find("title_right") != std::string::npos);
        }
    }
    SUBCASE("duplicate id pair") {
        write_file(tmp / "dup.csv", "id_left,id_right,label,title_left,title_right\na,b,1,x,y\na,b,0,x,z\n");
        CHECK_THROWS_AS(load_split(tmp / "dup.csv", cfg), DuplicateError);
    }
    SUBCASE("unreadable file") { CHECK_THROWS_AS(load_split(tmp / "nope.csv", cfg), IoError); }
    SUBCASE("bad label reports the row number") {
        write_file(tmp / "lbl.csv", "id_left,id_right,label,title_left,title_right\na,b,1,x,y\nc,d,maybe,x,y\n");
        try {
            load_split(tmp / "lbl.csv", cfg);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("row 3") != std::string::npos);
        }
    }
    SUBCASE("configured label values and unlabeled pairs") {
        cfg.columns.match_values = {"true"};
        cfg.columns.non_match_values = {"false"};
        cfg.columns.allow_unlabeled = true;
        write_file(tmp / "l.csv", "id_left,id_right,label,title_left,title_right\na,b,true,x,y\nc,d,false,x,y\ne,f,,x,y\n");
        const auto c = split_counts(load_split(tmp / "l.csv", cfg));
        CHECK(c.positive == 1);
        CHECK(c.negative == 1);
        CHECK(c.unlabeled == 1);
        CHECK(c.positive + c.negative + c.unlabeled == c.total);
    }
}

TEST_CASE("empty records are counted in stats") {
    Dataset d = title_dataset("d", {title_pair("1", "", "x", Label::Match), title_pair("2", "a", "b", Label::NonMatch)});
    const auto c = dataset_stats(d).at("train");
    CHECK(c.empty_records == 1);
    CHECK(c.positive == 1);
}

TEST_CASE("dataset with one match pair") {
    const auto c = split_counts({title_pair("1", "a", "a", Label::Match)});
    CHECK(c.positive == 1);
    CHECK(c.negative == 0);
}

TEST_CASE("write_dataset then load_dataset is the identity") {
    std::mt19937_64 rng(5);
    TempDir tmp;
    for (int i = 0; i < 100; ++i) {
        const Dataset d = random_dataset(rng);
        const fs::path dir = tmp / ("d" + std::to_string(i));
        write_dataset(d, dir);
        const Dataset back = load_dataset(dir / "manifest.json");
        REQUIRE(back == d);
        for (const auto& [split, pairs] : back.splits) {
            const auto c = split_counts(pairs);
            CHECK(c.positive + c.negative + c.unlabeled == pairs.size());
        }
    }
}

TEST_CASE("combine_datasets") {
    std::vector<CandidatePair> seed_pairs, other;
    for (int i = 0; i < 2500; ++i) {
        seed_pairs.push_back(title_pair("s" + std::to_string(i), "item " + std::to_string(i), "offer", Label::NonMatch));
        other.push_back(title_pair("o" + std::to_string(i), "thing " + std::to_string(i), "offer", Label::Match));
    }
    const Dataset seed = title_dataset("seed", seed_pairs);

    CHECK(combine_datasets(seed, {}, true).split("train").size() == 2500);
    CHECK(combine_datasets(seed, other, true).split("train").size() == 5000);
    CHECK(combine_datasets(seed, seed_pairs, true).split("train").size() == 2500);
    CHECK(combine_datasets(seed, seed_pairs, false).split("train").size() == 5000);

    const Dataset once = combine_datasets(seed, other, true);
    CHECK(combine_datasets(once, other, true) == once);

    auto bad = other;
    bad[0].left.attributes.emplace_back("isbn", "1");
    CHECK_THROWS_AS(combine_datasets(seed, bad, true), SchemaError);
}

TEST_CASE("combine_datasets with dedup is idempotent on random inputs") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 50; ++i) {
        std::vector<CandidatePair> a, b;
        for (int k = 0; k < 30; ++k) {
            auto make = [&](const std::string& id) {
                return title_pair(id, random_word(rng, 2), random_word(rng, 2), rng() % 2 ? Label::Match : Label::NonMatch);
            };
            a.push_back(make("a" + std::to_string(k)));
            b.push_back(make("b" + std::to_string(k)));
        }
        const Dataset seed = title_dataset("s", a);
        const Dataset ab = combine_datasets(seed, b, true);
        CHECK(combine_datasets(ab, b, true) == ab);
    }
}

TEST_CASE("manifest validation") {
    TempDir tmp;
    write_file(tmp / "m.json", R"({"name":"x","domain":"books","schema":["title"],
        "serialization":{"mode":"single","attribute":"title"},"splits":{"train":"t.csv"}})");
    write_file(tmp / "t.csv", "id_left,id_right,label,title_left,title_right\n");
    CHECK_THROWS_AS(load_dataset(tmp / "m.json"), ConfigError);

    write_file(tmp / "m2.json", R"({"name":"x","schema":["title"],
        "serialization":{"mode":"single","attribute":"title"},"splits":{"holdout":"t.csv"}})");
    CHECK_THROWS_AS(load_manifest(tmp / "m2.json"), ConfigError);
}
