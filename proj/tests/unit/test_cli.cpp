#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <string>

#include "test_util.hpp"

namespace {

struct Run {
  int code;
  std::string err;
};

// Runs the CLI with stderr captured to a file; stdout is discarded.
Run cli(const std::string& args) {
  test_util::TempDir tmp;
  const auto err_path = tmp.path / "stderr";
  const std::string cmd = std::string(GRADECHAT_CLI) + " " + args + " >/dev/null 2>" + err_path.string();
  const int status = std::system(cmd.c_str());
  return Run{WIFEXITED(status) ? WEXITSTATUS(status) : -1, test_util::read(err_path)};
}

const std::string fixtures = GRADECHAT_FIXTURES;

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    CHECK(cli("--version").code == 0);
    CHECK(cli("").code == 2);
    CHECK(cli("frobnicate").code == 2);
    CHECK(cli("build-vocab --decks " + fixtures + "/decks").code == 2);
    const Run r = cli("selfchat-eval --toy --methods baseline,beam --out /tmp/unused-gradechat");
    CHECK(r.code == 2);
    CHECK(r.err.find("baseline, detailed, overgenerate, fudge") != std::string::npos);
    CHECK(cli("selfchat-eval --toy --pairs N5:N9 --out /tmp/unused-gradechat").code == 2);
  }

  TEST_CASE("missing inputs exit 4 and name the path") {
    test_util::TempDir out;
    Run r = cli("build-vocab --decks /nonexistent/decks-dir --out " + out.path.string());
    CHECK(r.code == 4);
    CHECK(r.err.find("/nonexistent/decks-dir") != std::string::npos);
    r = cli("report --toy --transcripts /nonexistent/t.jsonl --out " + out.path.string());
    CHECK(r.code == 4);
    CHECK(r.err.find("/nonexistent/t.jsonl") != std::string::npos);
  }

  TEST_CASE("fudge over a provider without logprobs is a capability error") {
    test_util::TempDir out;
    const Run r = cli("selfchat-eval --toy --lm remote --remote-url http://127.0.0.1:9/v1 --remote-model m "
                      "--methods fudge --pairs N5:N5 --per-pair 1 --turns 1 --out " + out.path.string());
    CHECK(r.code == 3);
    CHECK(r.err.find("next-token distributions") != std::string::npos);
  }

  TEST_CASE("build-vocab reruns are byte-identical") {
    test_util::TempDir a;
    test_util::TempDir b;
    const std::string args = "build-vocab --decks " + fixtures + "/decks --corpus " + fixtures + "/corpus --out ";
    REQUIRE(cli(args + a.path.string()).code == 0);
    REQUIRE(cli(args + b.path.string()).code == 0);
    for (const char* f : {"lexicon/n5.json", "lexicon/n1.json", "lexicon/lexicon.meta.json", "heuristic/n3.json"}) {
      CAPTURE(f);
      const std::string first = test_util::read(a.path / f);
      CHECK_FALSE(first.empty());
      CHECK(first == test_util::read(b.path / f));
    }
    const std::string before = test_util::read(a.path / "lexicon/n4.json");
    REQUIRE(cli(args + a.path.string()).code == 0);
    CHECK(test_util::read(a.path / "lexicon/n4.json") == before);
  }
}
