#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <random>

#include "evo2048/external_evaluator.hpp"
#include "support/reference.hpp"

using namespace evo2048;

namespace {

ExternalEvaluatorHandle shell(const std::string& cmd, int timeout_ms = 2000) { return {cmd, 1, timeout_ms}; }

bool have_python() { return std::system("python3 -c 'pass' >/dev/null 2>&1") == 0; }

}  // namespace

TEST(ExternalEvaluator, RequestCodecRoundTrip) {
    std::mt19937_64 eng(1);
    for (int i = 0; i < 200; ++i) {
        const Board b = reference::random_board(eng, 15);
        EXPECT_EQ(decode_board_request(encode_board_request(b)), b);
    }
    EXPECT_THROW(decode_board_request("1 2 3"), ParseError);
    EXPECT_THROW(decode_board_request("0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 99"), ParseError);
}

TEST(ExternalEvaluator, ConstantEcho) {
    ExternalEvaluator ev(shell("echo 'EVAL2048 1'; while read line; do echo 0.5; done"));
    std::mt19937_64 eng(2);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(ev.evaluate(reference::random_board(eng)), 0.5);
    EXPECT_EQ(eval_external(shell("echo 'EVAL2048 1'; read line; echo 0.5"), Board{}), 0.5);
}

TEST(ExternalEvaluator, MatchesInProcessPost10) {
    const auto post10 = canonical_specs().post10;
    ExternalEvaluator ev(shell(std::string(EVO2048_EVALUATOR_BIN) + " --canonical post10"));
    std::mt19937_64 eng(3);
    for (int i = 0; i < 100; ++i) {
        const Board b = reference::random_board(eng, 12, (i % 5) / 5.0);
        EXPECT_NEAR(ev.evaluate(b), eval_spec(post10, b), 1e-9);
    }
}

TEST(ExternalEvaluator, PythonSampleMatchesInProcessPost10) {
    if (!have_python()) GTEST_SKIP() << "python3 not available";
    const auto post10 = canonical_specs().post10;
    ExternalEvaluator ev(shell("python3 " EVO2048_SAMPLES_DIR "/post10_evaluator.py", 5000));
    std::mt19937_64 eng(4);
    for (int i = 0; i < 100; ++i) {
        const Board b = reference::random_board(eng, 12, (i % 5) / 5.0);
        EXPECT_NEAR(ev.evaluate(b), eval_spec(post10, b), 1e-9);
    }
}

TEST(ExternalEvaluator, HangingEvaluatorTimesOut) {
    ExternalEvaluator ev(shell("echo 'EVAL2048 1'; sleep 30", 200));
    const auto t0 = std::chrono::steady_clock::now();
    EXPECT_THROW(ev.evaluate(Board{}), EvaluatorTimeout);
    EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
    EXPECT_TRUE(ev.broken());
    EXPECT_THROW(ev.evaluate(Board{}), EvaluatorError);
}

TEST(ExternalEvaluator, SilentStartupTimesOut) {
    EXPECT_THROW(ExternalEvaluator(shell("sleep 30", 200)), EvaluatorTimeout);
}

TEST(ExternalEvaluator, BadHandshake) {
    try {
        ExternalEvaluator ev(shell("echo 'HELLO 7'; sleep 1"));
        FAIL();
    } catch (const EvaluatorError& e) {
        EXPECT_EQ(e.kind(), EvaluatorError::Kind::Handshake);
    }
}

TEST(ExternalEvaluator, MalformedResponse) {
    ExternalEvaluator ev(shell("echo 'EVAL2048 1'; while read line; do echo 'about 0.5'; done"));
    EXPECT_THROW(ev.evaluate(Board{}), EvaluatorMalformed);
}

TEST(ExternalEvaluator, NonFiniteResponse) {
    ExternalEvaluator ev(shell("echo 'EVAL2048 1'; while read line; do echo nan; done"));
    EXPECT_THROW(ev.evaluate(Board{}), EvaluatorNonFinite);
    ExternalEvaluator inf(shell("echo 'EVAL2048 1'; while read line; do echo inf; done"));
    EXPECT_THROW(inf.evaluate(Board{}), EvaluatorNonFinite);
}

TEST(ExternalEvaluator, CrashIsReported) {
    ExternalEvaluator ev(shell("echo 'EVAL2048 1'; read line; exit 3"));
    try {
        ev.evaluate(Board{});
        FAIL();
    } catch (const EvaluatorError& e) {
        EXPECT_EQ(e.kind(), EvaluatorError::Kind::Exited);
    }
}
