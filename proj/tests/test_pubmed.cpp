#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "ebtm/pubmed.hpp"
#include "support/tempfile.hpp"

namespace pubmed = ebtm::pubmed;
using ebtm::corpus::RawDocument;

namespace {

const std::string kFixtures = EBTM_FIXTURES_DIR;

// Loopback efetch stand-in. Configure `handler` before start().
struct TestServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~TestServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port) + "/efetch"; }
};

std::vector<std::string> split_ids(const std::string& joined) {
  std::vector<std::string> ids;
  std::istringstream in(joined);
  std::string id;
  while (std::getline(in, id, ',')) ids.push_back(id);
  return ids;
}

// PMID "13" is served without an abstract to exercise the missing list.
std::string efetch_payload(const std::string& joined_ids) {
  std::string xml = "<?xml version=\"1.0\" ?>\n<PubmedArticleSet>";
  for (const std::string& id : split_ids(joined_ids)) {
    xml += "<PubmedArticle><MedlineCitation><PMID Version=\"1\">" + id + "</PMID>";
    if (id != "13") {
      xml += "<Article><Abstract><AbstractText>Abstract for PMID " + id +
             ".</AbstractText></Abstract></Article>";
    }
    xml += "</MedlineCitation></PubmedArticle>";
  }
  xml += "</PubmedArticleSet>";
  return xml;
}

std::vector<std::string> numbered_pmids(int n) {
  std::vector<std::string> pmids;
  for (int i = 1; i <= n; ++i) pmids.push_back(std::to_string(i));
  return pmids;
}

pubmed::FetchConfig fast_config(const std::string& endpoint) {
  pubmed::FetchConfig cfg;
  cfg.endpoint = endpoint;
  cfg.rate_limit_per_sec = 1000.0;
  cfg.backoff_initial_sec = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("entity decoding covers named, decimal, and hex forms") {
  namespace detail = pubmed::detail;
  CHECK(detail::decode_entities("&lt;x&gt;") == "<x>");
  CHECK(detail::decode_entities("a &amp; b") == "a & b");
  CHECK(detail::decode_entities("&quot;q&apos;") == "\"q'");
  CHECK(detail::decode_entities("&amp;amp;") == "&amp;");  // decoded once, not recursively
  CHECK(detail::decode_entities("caf&#233;") == "caf\xC3\xA9");
  CHECK(detail::decode_entities("&#x394;x") == "\xCE\x94" "x");
  CHECK(detail::decode_entities("&#x1F600;") == "\xF0\x9F\x98\x80");

  // Unknown or malformed references pass through unchanged.
  CHECK(detail::decode_entities("&unknown;") == "&unknown;");
  CHECK(detail::decode_entities("&#;") == "&#;");
  CHECK(detail::decode_entities("&#xZZ;") == "&#xZZ;");
  CHECK(detail::decode_entities("&#0;") == "&#0;");
  CHECK(detail::decode_entities("&#1114112;") == "&#1114112;");  // beyond U+10FFFF
  CHECK(detail::decode_entities("a & b") == "a & b");
  CHECK(detail::decode_entities("&waytoolongentity;") == "&waytoolongentity;");
  CHECK(detail::decode_entities("") == "");
}

TEST_CASE("tag stripping and whitespace collapsing") {
  namespace detail = pubmed::detail;
  CHECK(detail::strip_tags("<i>fear</i> and <b>loathing</b>") == "fear and loathing");
  CHECK(detail::strip_tags("<a href='x'>text") == "text");
  CHECK(detail::strip_tags("plain") == "plain");
  CHECK(detail::strip_tags("x > y") == "x  y");  // stray '>' is dropped

  CHECK(detail::collapse_whitespace("\n\t hello \r\n world \t") == "hello world");
  CHECK(detail::collapse_whitespace("one two") == "one two");
  CHECK(detail::collapse_whitespace("   ") == "");
  CHECK(detail::collapse_whitespace("") == "");
}

TEST_CASE("efetch payloads parse into documents and a missing list") {
  const std::string xml = testutil::slurp(kFixtures + "/efetch_sample.xml");
  std::vector<std::string> missing;
  const std::vector<RawDocument> docs = pubmed::parse_efetch_xml(xml, &missing);

  REQUIRE(docs.size() == 2);
  CHECK(docs[0].id == "11111");
  CHECK(docs[0].text ==
        "Fear conditioning & extinction engage the amygdala <and> prefrontal cortex in an "
        "\xC3\xA9" "tude of threat processing.");
  CHECK(docs[1].id == "22222");
  CHECK(docs[1].text ==
        "Working memory tasks recruit prefrontal cortex. Load effects were observed in "
        "parietal regions.");
  CHECK(missing == std::vector<std::string>{"33333"});

  CHECK(pubmed::parse_efetch_xml("<PubmedArticleSet></PubmedArticleSet>", nullptr).empty());
  const std::string padded_pmid =
      "<PubmedArticleSet><PubmedArticle><MedlineCitation><PMID Version=\"1\">\n 44444 "
      "</PMID><Article><Abstract><AbstractText>Text.</AbstractText></Abstract></Article>"
      "</MedlineCitation></PubmedArticle></PubmedArticleSet>";
  const std::vector<RawDocument> padded = pubmed::parse_efetch_xml(padded_pmid, nullptr);
  REQUIRE(padded.size() == 1);
  CHECK(padded[0].id == "44444");

  const std::string no_pmid =
      "<PubmedArticleSet><PubmedArticle><MedlineCitation><Article><Abstract>"
      "<AbstractText>Orphan.</AbstractText></Abstract></Article></MedlineCitation>"
      "</PubmedArticle></PubmedArticleSet>";
  CHECK_THROWS_AS(pubmed::parse_efetch_xml(no_pmid, nullptr), ebtm::IoError);
}

TEST_CASE("endpoint URLs split into base and path") {
  namespace detail = pubmed::detail;
  const detail::ParsedUrl full = detail::parse_url("https://host.example/entrez/efetch.fcgi");
  CHECK(full.base == "https://host.example");
  CHECK(full.path == "/entrez/efetch.fcgi");
  CHECK(full.https);

  const detail::ParsedUrl bare = detail::parse_url("http://127.0.0.1:8080");
  CHECK(bare.base == "http://127.0.0.1:8080");
  CHECK(bare.path == "/");
  CHECK(!bare.https);

  CHECK_THROWS_AS(detail::parse_url("host/path"), ebtm::ValidationError);
}

TEST_CASE("fetches batch at the configured size and keep document order") {
  TestServer ts;
  std::mutex mutex;
  std::vector<std::string> seen_ids;
  ts.server.Get("/efetch", [&](const httplib::Request& req, httplib::Response& res) {
    const std::string ids = req.get_param_value("id");
    {
      std::lock_guard<std::mutex> lock(mutex);
      seen_ids.push_back(ids);
    }
    CHECK(req.get_param_value("db") == "pubmed");
    CHECK(req.get_param_value("retmode") == "xml");
    res.set_content(efetch_payload(ids), "text/xml");
  });
  ts.start();

  pubmed::FetchConfig cfg = fast_config(ts.endpoint());
  cfg.max_ids_per_request = 100;
  const std::vector<std::string> pmids = numbered_pmids(250);
  const pubmed::FetchResult result = pubmed::fetch_abstracts(pmids, cfg);

  REQUIRE(seen_ids.size() == 3);
  CHECK(split_ids(seen_ids[0]) == std::vector<std::string>(pmids.begin(), pmids.begin() + 100));
  CHECK(split_ids(seen_ids[1]) ==
        std::vector<std::string>(pmids.begin() + 100, pmids.begin() + 200));
  CHECK(split_ids(seen_ids[2]) == std::vector<std::string>(pmids.begin() + 200, pmids.end()));

  REQUIRE(result.documents.size() == 249);  // "13" has no abstract
  CHECK(result.missing == std::vector<std::string>{"13"});
  CHECK(result.documents[0].id == "1");
  CHECK(result.documents[0].text == "Abstract for PMID 1.");
  CHECK(result.documents[11].id == "12");
  CHECK(result.documents[12].id == "14");
  CHECK(result.documents.back().id == "250");

  // An empty PMID list makes no requests at all.
  seen_ids.clear();
  const pubmed::FetchResult none = pubmed::fetch_abstracts({}, cfg);
  CHECK(none.documents.empty());
  CHECK(seen_ids.empty());
}

TEST_CASE("a failing batch retries with backoff until it succeeds") {
  TestServer ts;
  std::atomic<int> attempts{0};
  ts.server.Get("/efetch", [&](const httplib::Request& req, httplib::Response& res) {
    if (++attempts <= 2) {
      res.status = 500;
      return;
    }
    res.set_content(efetch_payload(req.get_param_value("id")), "text/xml");
  });
  ts.start();

  pubmed::FetchConfig cfg = fast_config(ts.endpoint());
  cfg.max_attempts = 3;
  cfg.backoff_initial_sec = 0.02;
  const auto t0 = std::chrono::steady_clock::now();
  const pubmed::FetchResult result = pubmed::fetch_abstracts({"7", "8"}, cfg);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;

  CHECK(attempts == 3);
  REQUIRE(result.documents.size() == 2);
  CHECK(result.documents[0].id == "7");
  CHECK(elapsed.count() >= 0.05);  // backoff slept 0.02 then 0.04 seconds
}

TEST_CASE("a batch that keeps failing aborts with the unfetched PMIDs") {
  TestServer ts;
  std::atomic<int> attempts{0};
  ts.server.Get("/efetch", [&](const httplib::Request&, httplib::Response& res) {
    ++attempts;
    res.status = 503;
  });
  ts.start();

  pubmed::FetchConfig cfg = fast_config(ts.endpoint());
  cfg.max_attempts = 2;
  std::vector<std::string> pmids;
  for (int i = 1; i <= 25; ++i) pmids.push_back("90" + std::to_string(i));
  try {
    pubmed::fetch_abstracts(pmids, cfg);
    FAIL("expected IoError");
  } catch (const ebtm::IoError& e) {
    const std::string message = e.what();
    CHECK(message.find("HTTP status 503") != std::string::npos);
    CHECK(message.find("unfetched PMIDs") != std::string::npos);
    CHECK(message.find("901") != std::string::npos);
    CHECK(message.find("9020") != std::string::npos);
    CHECK(message.find("(25 total)") != std::string::npos);
    CHECK(message.find("9021") == std::string::npos);  // only 20 are listed
  }
  CHECK(attempts == 2);
}

TEST_CASE("requests are spaced by the rate limit") {
  TestServer ts;
  ts.server.Get("/efetch", [&](const httplib::Request& req, httplib::Response& res) {
    res.set_content(efetch_payload(req.get_param_value("id")), "text/xml");
  });
  ts.start();

  pubmed::FetchConfig cfg = fast_config(ts.endpoint());
  cfg.max_ids_per_request = 1;
  cfg.rate_limit_per_sec = 20.0;
  const auto t0 = std::chrono::steady_clock::now();
  const pubmed::FetchResult result = pubmed::fetch_abstracts({"1", "2", "3"}, cfg);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
  CHECK(result.documents.size() == 3);
  CHECK(elapsed.count() >= 0.08);  // two 50 ms gaps between three requests
}

TEST_CASE("fetch configuration and inputs are validated") {
  pubmed::FetchConfig cfg;
  cfg.endpoint = "";
  CHECK_THROWS_AS(cfg.validate(), ebtm::ValidationError);
  cfg = {};
  cfg.rate_limit_per_sec = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ebtm::ValidationError);
  cfg = {};
  cfg.max_ids_per_request = 0;
  CHECK_THROWS_AS(cfg.validate(), ebtm::ValidationError);
  cfg = {};
  cfg.max_attempts = 0;
  CHECK_THROWS_AS(cfg.validate(), ebtm::ValidationError);
  cfg = {};
  cfg.backoff_initial_sec = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ebtm::ValidationError);

  cfg = {};
  cfg.endpoint = "http://127.0.0.1:1/efetch";
  CHECK_THROWS_AS(pubmed::fetch_abstracts({""}, cfg), ebtm::ValidationError);

  // Test binaries build without TLS, so https endpoints are rejected up front.
  pubmed::FetchConfig https_cfg;
  https_cfg.endpoint = "https://127.0.0.1:1/efetch";
  https_cfg.max_attempts = 1;
  CHECK_THROWS_AS(pubmed::fetch_abstracts({"1"}, https_cfg), ebtm::IoError);
}
