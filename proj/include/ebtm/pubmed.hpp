#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>

#include "ebtm/corpus.hpp"
#include "ebtm/errors.hpp"

namespace ebtm::pubmed {

struct FetchConfig {
  std::string endpoint = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi";
  double rate_limit_per_sec = 3.0;  // public E-utilities policy
  int max_ids_per_request = 200;
  int max_attempts = 3;
  double backoff_initial_sec = 0.5;

  void validate() const {
    require(!endpoint.empty(), "FetchConfig: endpoint must be set");
    require(rate_limit_per_sec > 0.0, "FetchConfig: rate limit must be > 0");
    require(max_ids_per_request >= 1, "FetchConfig: batch size must be >= 1");
    require(max_attempts >= 1, "FetchConfig: max_attempts must be >= 1");
    require(backoff_initial_sec >= 0.0, "FetchConfig: backoff must be >= 0");
  }
};

struct FetchResult {
  std::vector<corpus::RawDocument> documents;
  std::vector<std::string> missing;  // PMIDs that came back without an abstract
};

namespace detail {

inline std::string decode_entities(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '&') {
      out.push_back(s[i]);
      ++i;
      continue;
    }
    const std::size_t end = s.find(';', i);
    if (end == std::string_view::npos || end - i > 12) {
      out.push_back(s[i]);
      ++i;
      continue;
    }
    const std::string_view entity = s.substr(i + 1, end - i - 1);
    if (entity == "lt") {
      out.push_back('<');
    } else if (entity == "gt") {
      out.push_back('>');
    } else if (entity == "amp") {
      out.push_back('&');
    } else if (entity == "quot") {
      out.push_back('"');
    } else if (entity == "apos") {
      out.push_back('\'');
    } else if (!entity.empty() && entity[0] == '#') {
      std::uint32_t code = 0;
      bool ok = entity.size() > 1;
      if (entity.size() > 2 && (entity[1] == 'x' || entity[1] == 'X')) {
        for (std::size_t j = 2; j < entity.size() && ok; ++j) {
          const char c = entity[j];
          code <<= 4;
          if (c >= '0' && c <= '9') {
            code += static_cast<std::uint32_t>(c - '0');
          } else if (c >= 'a' && c <= 'f') {
            code += static_cast<std::uint32_t>(c - 'a' + 10);
          } else if (c >= 'A' && c <= 'F') {
            code += static_cast<std::uint32_t>(c - 'A' + 10);
          } else {
            ok = false;
          }
        }
      } else {
        for (std::size_t j = 1; j < entity.size() && ok; ++j) {
          const char c = entity[j];
          if (c < '0' || c > '9') {
            ok = false;
          } else {
            code = code * 10 + static_cast<std::uint32_t>(c - '0');
          }
        }
      }
      if (ok && code > 0 && code <= 0x10FFFF) {
        corpus::detail::utf8_append(out, code);
      } else {
        out.append(s.substr(i, end - i + 1));
      }
    } else {
      out.append(s.substr(i, end - i + 1));
    }
    i = end + 1;
  }
  return out;
}

inline std::string strip_tags(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_tag = false;
  for (char c : s) {
    if (c == '<') {
      in_tag = true;
    } else if (c == '>') {
      in_tag = false;
    } else if (!in_tag) {
      out.push_back(c);
    }
  }
  return out;
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
    if (ws) {
      if (!out.empty()) pending_space = true;
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

// Returns the inner text of the first `tag` element at or after `from`, or
// npos in `pos_out` when absent. Attributes on the opening tag are allowed.
inline std::string find_element(std::string_view xml, std::string_view tag, std::size_t from,
                                std::size_t* pos_out) {
  const std::string open = "<" + std::string(tag);
  const std::string close = "</" + std::string(tag) + ">";
  std::size_t pos = from;
  while (true) {
    pos = xml.find(open, pos);
    if (pos == std::string_view::npos) break;
    const std::size_t after = pos + open.size();
    if (after < xml.size() && (xml[after] == '>' || xml[after] == ' ' || xml[after] == '\t' ||
                               xml[after] == '\n' || xml[after] == '\r' || xml[after] == '/')) {
      const std::size_t content_start = xml.find('>', pos);
      if (content_start == std::string_view::npos) break;
      const std::size_t end = xml.find(close, content_start + 1);
      if (end == std::string_view::npos) break;
      if (pos_out) *pos_out = pos;
      return std::string(xml.substr(content_start + 1, end - content_start - 1));
    }
    pos = after;
  }
  if (pos_out) *pos_out = std::string_view::npos;
  return {};
}

}  // namespace detail

/// Parses an efetch XML payload (retmode=xml, rettype=abstract) into raw
/// documents. Articles without an abstract are reported through `missing`.
inline std::vector<corpus::RawDocument> parse_efetch_xml(const std::string& xml,
                                                         std::vector<std::string>* missing) {
  std::vector<corpus::RawDocument> docs;
  std::size_t cursor = 0;
  while (true) {
    std::size_t article_pos = std::string::npos;
    const std::string article =
        detail::find_element(xml, "PubmedArticle", cursor, &article_pos);
    if (article_pos == std::string::npos) break;
    cursor = article_pos + article.size();

    std::size_t pmid_pos = std::string::npos;
    const std::string pmid_raw = detail::find_element(article, "PMID", 0, &pmid_pos);
    const std::string pmid = detail::collapse_whitespace(pmid_raw);
    if (pmid_pos == std::string::npos || pmid.empty()) {
      throw IoError("parse_efetch_xml: PubmedArticle without a PMID");
    }

    std::string abstract_text;
    std::size_t abs_cursor = 0;
    while (true) {
      std::size_t abs_pos = std::string::npos;
      const std::string fragment =
          detail::find_element(article, "AbstractText", abs_cursor, &abs_pos);
      if (abs_pos == std::string::npos) break;
      abs_cursor = abs_pos + 1;
      const std::string cleaned = detail::collapse_whitespace(
          detail::decode_entities(detail::strip_tags(fragment)));
      if (!cleaned.empty()) {
        if (!abstract_text.empty()) abstract_text.push_back(' ');
        abstract_text += cleaned;
      }
    }
    if (abstract_text.empty()) {
      if (missing) missing->push_back(pmid);
      continue;
    }
    docs.push_back({pmid, abstract_text});
  }
  return docs;
}

namespace detail {

struct ParsedUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // leading '/'
  bool https = false;
};

inline ParsedUrl parse_url(const std::string& url) {
  const std::size_t scheme_end = url.find("://");
  require(scheme_end != std::string::npos, "fetch_abstracts: endpoint must include a scheme");
  ParsedUrl parsed;
  parsed.https = url.compare(0, scheme_end, "https") == 0;
  const std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    parsed.base = url;
    parsed.path = "/";
  } else {
    parsed.base = url.substr(0, path_start);
    parsed.path = url.substr(path_start);
  }
  return parsed;
}

}  // namespace detail

/// Fetches abstracts for the given PMIDs in batches of at most
/// `max_ids_per_request`, honoring the request rate limit and retrying each
/// batch with exponential backoff. A batch that still fails after the retries
/// aborts the fetch with an error listing every PMID not yet retrieved.
inline FetchResult fetch_abstracts(const std::vector<std::string>& pmids,
                                   const FetchConfig& config = {}) {
  config.validate();
  FetchResult result;
  if (pmids.empty()) return result;
  for (const std::string& id : pmids) {
    require(!id.empty(), "fetch_abstracts: empty PMID");
  }

  const detail::ParsedUrl url = detail::parse_url(config.endpoint);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (url.https) {
    throw IoError("fetch_abstracts: built without TLS support; use an http:// endpoint");
  }
#endif
  httplib::Client client(url.base);
  client.set_connection_timeout(30, 0);
  client.set_read_timeout(60, 0);

  const auto min_interval = std::chrono::duration<double>(1.0 / config.rate_limit_per_sec);
  auto last_request = std::chrono::steady_clock::now() - std::chrono::hours(1);

  const std::size_t batch_size = static_cast<std::size_t>(config.max_ids_per_request);
  for (std::size_t begin = 0; begin < pmids.size(); begin += batch_size) {
    const std::size_t end = std::min(pmids.size(), begin + batch_size);
    std::string ids;
    for (std::size_t i = begin; i < end; ++i) {
      if (!ids.empty()) ids.push_back(',');
      ids += pmids[i];
    }
    const std::string target =
        url.path + "?db=pubmed&rettype=abstract&retmode=xml&id=" + ids;

    bool fetched = false;
    std::string error;
    for (int attempt = 1; attempt <= config.max_attempts && !fetched; ++attempt) {
      if (attempt > 1) {
        const double scale = std::pow(2.0, attempt - 2);
        std::this_thread::sleep_for(
            std::chrono::duration<double>(config.backoff_initial_sec * scale));
      }
      const auto now = std::chrono::steady_clock::now();
      const auto since_last = std::chrono::duration<double>(now - last_request);
      if (since_last < min_interval) {
        std::this_thread::sleep_for(min_interval - since_last);
      }
      last_request = std::chrono::steady_clock::now();

      httplib::Result response = client.Get(target);
      if (!response) {
        error = "transport error (" + httplib::to_string(response.error()) + ")";
        continue;
      }
      if (response->status != 200) {
        error = "HTTP status " + std::to_string(response->status);
        continue;
      }
      std::vector<corpus::RawDocument> docs = parse_efetch_xml(response->body, &result.missing);
      for (corpus::RawDocument& doc : docs) result.documents.push_back(std::move(doc));
      fetched = true;
    }
    if (!fetched) {
      std::string unfetched;
      std::size_t listed = 0;
      for (std::size_t i = begin; i < pmids.size() && listed < 20; ++i, ++listed) {
        if (!unfetched.empty()) unfetched += ", ";
        unfetched += pmids[i];
      }
      if (pmids.size() - begin > 20) {
        unfetched += ", ... (" + std::to_string(pmids.size() - begin) + " total)";
      }
      throw IoError("fetch_abstracts: giving up after " + std::to_string(config.max_attempts) +
                    " attempts (" + error + "); unfetched PMIDs: " + unfetched);
    }
  }
  return result;
}

}  // namespace ebtm::pubmed
