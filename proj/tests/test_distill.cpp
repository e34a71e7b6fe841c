#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "s2d/distill.hpp"
#include "test_util.hpp"

using namespace s2d;
using s2d::test::rand_tensor;

namespace {
Tensor vec(std::initializer_list<double> v) { return Tensor({v.size()}, std::vector<double>(v)); }
} // namespace

TEST_CASE("anchor queues") {
    SECTION("FIFO eviction at capacity") {
        AnchorQueues q(2, 2);
        q.enqueue(vec({1, 0}), vec({1, 0}), 0);
        q.enqueue(vec({2, 0}), vec({0.5, 0.5}), 0);
        q.enqueue(vec({3, 0}), vec({0, 1}), 0);
        REQUIRE(q.queue(0).size() == 2);
        CHECK(q.queue(0)[0].feature[0] == 2.0);
        CHECK(q.queue(0)[1].feature[0] == 3.0);
    }
    SECTION("insertion order preserved within a class") {
        AnchorQueues q(1, 8);
        for (int i = 0; i < 5; ++i) q.enqueue(vec({double(i), 1}), vec({0.5, 0.5}), 0);
        for (int i = 0; i < 5; ++i) CHECK(q.queue(0)[i].feature[0] == double(i));
    }
    SECTION("label out of range") {
        AnchorQueues q(2, 2);
        CHECK_THROWS_AS(q.enqueue(vec({1, 0}), vec({1, 0}), 2), ContractError);
    }
    SECTION("stored probabilities must be normalized") {
        AnchorQueues q(1, 2);
        CHECK_THROWS_AS(q.enqueue(vec({1, 0}), vec({0.9, 0.2}), 0), ContractError);
    }
    SECTION("queue contents are detached copies") {
        AnchorQueues q(1, 2);
        Graph g;
        Var feat = g.leaf(vec({1, 2}), true);
        Var logits = g.leaf(vec({0.3, -0.3}), true);
        Tensor probs = softmax_values(logits.value(), 0);
        q.enqueue(feat.value(), probs, 0);
        // a later backward pass cannot touch what the queue holds
        g.backward(sum_all(mul(feat, feat)));
        CHECK(q.queue(0)[0].feature[0] == 1.0);
        CHECK(q.queue(0)[0].feature[1] == 2.0);
        // and losses built from queue-derived labels put no gradient on them
        Graph g2;
        Var z = g2.leaf(vec({0.1, 0.2}), true);
        auto sel = top_k_scores(similarity_scores(vec({1, 1}), q), q, 1);
        Tensor label = soft_label(sel, 2);
        g2.backward(soft_bce(z, label));
        CHECK(q.queue(0)[0].feature[0] == 1.0);
    }
}

TEST_CASE("similarity scores") {
    SECTION("self similarity is one, orthogonal is zero") {
        CHECK_THAT(cosine_similarity(vec({2, 1}), vec({2, 1})), Catch::Matchers::WithinAbs(1.0, 1e-12));
        CHECK_THAT(cosine_similarity(vec({1, 0}), vec({0, 3})), Catch::Matchers::WithinAbs(0.0, 1e-12));
    }
    SECTION("hand value 1/sqrt(2)") {
        CHECK_THAT(cosine_similarity(vec({1, 1}), vec({1, 0})), Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0), 1e-12));
    }
    SECTION("zero-norm vectors rejected") {
        CHECK_THROWS_AS(cosine_similarity(vec({0, 0}), vec({1, 0})), NumericError);
    }
    SECTION("per-class score lists follow queue order") {
        AnchorQueues q(2, 4);
        q.enqueue(vec({1, 0}), vec({1, 0}), 0);
        q.enqueue(vec({0, 1}), vec({0, 1}), 0);
        q.enqueue(vec({1, 1}), vec({0.5, 0.5}), 1);
        auto s = similarity_scores(vec({1, 0}), q);
        REQUIRE(s[0].size() == 2);
        CHECK_THAT(s[0][0], Catch::Matchers::WithinAbs(1.0, 1e-12));
        CHECK_THAT(s[0][1], Catch::Matchers::WithinAbs(0.0, 1e-12));
        CHECK_THAT(s[1][0], Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0), 1e-12));
    }
}

TEST_CASE("top-K selection") {
    AnchorQueues q(1, 8);
    for (int i = 0; i < 3; ++i) q.enqueue(vec({1, 0}), vec({0.5, 0.5}), 0);
    SECTION("K=1 takes the per-class maximum; sort oracle for K=2") {
        std::vector<std::vector<double>> scores = {{0.9, 0.1, 0.5}};
        auto one = top_k_scores(scores, q, 1);
        REQUIRE(one.sigma.size() == 1);
        CHECK(one.sigma[0] == 0.9);
        auto two = top_k_scores(scores, q, 2);
        // independent oracle: sorted descending, take 2
        std::vector<double> sorted = {0.9, 0.1, 0.5};
        std::sort(sorted.rbegin(), sorted.rend());
        REQUIRE(two.sigma.size() == 2);
        CHECK(two.sigma[0] == sorted[0]);
        CHECK(two.sigma[1] == sorted[1]);
    }
    SECTION("ties break toward the older entry") {
        AnchorQueues tq(1, 4);
        tq.enqueue(vec({1, 0}), vec({1, 0}), 0);   // older
        tq.enqueue(vec({1, 0}), vec({0, 1}), 0);   // newer, same score
        auto sel = top_k_scores(similarity_scores(vec({1, 0}), tq), tq, 1);
        REQUIRE(sel.sigma.size() == 1);
        CHECK((*sel.probs[0])[0] == 1.0); // the older entry's probs
    }
    SECTION("partial queues contribute min(K, m), sorted descending") {
        AnchorQueues pq(2, 8);
        pq.enqueue(vec({1, 0}), vec({1, 0}), 0); // class 1 has just one anchor
        pq.enqueue(vec({0, 1}), vec({0, 1}), 1);
        pq.enqueue(vec({1, 1}), vec({0.5, 0.5}), 1);
        auto sel = top_k_scores(similarity_scores(vec({1, 2}), pq), pq, 2);
        CHECK(sel.sigma.size() == 3); // 1 + 2
        // per-class descending
        CHECK(sel.sigma[1] >= sel.sigma[2]);
    }
    SECTION("all queues empty is a contract error") {
        AnchorQueues eq(2, 4);
        std::vector<std::vector<double>> empty_scores(2);
        CHECK_THROWS_AS(top_k_scores(empty_scores, eq, 1), ContractError);
    }
}

TEST_CASE("soft labels") {
    SECTION("symmetric scores over opposing anchors give the uniform label") {
        TopKSelection sel;
        Tensor p1 = vec({1, 0}), p2 = vec({0, 1});
        sel.sigma = {0.7, 0.7};
        sel.probs = {&p1, &p2};
        Tensor y = soft_label(sel, 2);
        CHECK_THAT(y[0], Catch::Matchers::WithinAbs(0.5, 1e-12));
        CHECK_THAT(y[1], Catch::Matchers::WithinAbs(0.5, 1e-12));
    }
    SECTION("single nonzero score copies that anchor's probabilities") {
        TopKSelection sel;
        Tensor p1 = vec({0.9, 0.1}), p2 = vec({0.2, 0.8});
        sel.sigma = {0.6, 0.0};
        sel.probs = {&p1, &p2};
        Tensor y = soft_label(sel, 2);
        CHECK_THAT(y[0], Catch::Matchers::WithinAbs(0.9, 1e-12));
        CHECK_THAT(y[1], Catch::Matchers::WithinAbs(0.1, 1e-12));
    }
    SECTION("hand computation of the weighted combination") {
        TopKSelection sel;
        Tensor p1 = vec({0.9, 0.1}), p2 = vec({0.2, 0.8});
        sel.sigma = {0.6, 0.2};
        sel.probs = {&p1, &p2};
        Tensor y = soft_label(sel, 2);
        CHECK_THAT(y[0], Catch::Matchers::WithinAbs(0.725, 1e-12));
        CHECK_THAT(y[1], Catch::Matchers::WithinAbs(0.275, 1e-12));
    }
    SECTION("non-positive score sum falls back to uniform") {
        TopKSelection sel;
        Tensor p1 = vec({1, 0});
        sel.sigma = {-0.4};
        sel.probs = {&p1};
        Tensor y = soft_label(sel, 2);
        CHECK(y[0] == 0.5);
        CHECK(y[1] == 0.5);
    }
    SECTION("labels sum to one whenever anchors are normalized") {
        Rng rng(5);
        AnchorQueues q(3, 4);
        for (int i = 0; i < 10; ++i)
            q.enqueue(rand_tensor({4}, rng, -1.0, 1.0), softmax_values(rand_tensor({3}, rng), 0),
                      static_cast<std::size_t>(i % 3));
        for (int trial = 0; trial < 20; ++trial) {
            auto y = synthesize_soft_label(rand_tensor({4}, rng, -1.0, 1.0), q, 2);
            REQUIRE(y.has_value());
            double sum = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK((*y)[c] >= 0.0);
                sum += (*y)[c];
            }
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
        }
    }
    SECTION("cold start yields no label") {
        AnchorQueues q(2, 4);
        q.enqueue(vec({1, 0}), vec({1, 0}), 0); // class 1 still empty
        CHECK_FALSE(synthesize_soft_label(vec({1, 0}), q, 2).has_value());
    }
}

TEST_CASE("total loss") {
    SECTION("eta zero is plain cross-entropy") {
        Graph g;
        Var z = g.leaf(vec({0.2, -0.1, 0.4}), true);
        auto lt = total_loss(z, 1, Tensor::from({3}, {0.2, 0.5, 0.3}), 0.0);
        Graph g2;
        Var z2 = g2.leaf(vec({0.2, -0.1, 0.4}), true);
        Var ce = cross_entropy(z2, one_hot(1, 3));
        CHECK(lt.total.value().item() == ce.value().item());
        CHECK(lt.bce == 0.0);
    }
    SECTION("perfect one-hot prediction drives both terms to zero") {
        Graph g;
        Var z = g.leaf(vec({80.0, -80.0}), true);
        auto lt = total_loss(z, 0, Tensor::from({2}, {1.0, 0.0}), 1.0);
        CHECK_THAT(lt.ce, Catch::Matchers::WithinAbs(0.0, 1e-12));
        CHECK_THAT(lt.bce, Catch::Matchers::WithinAbs(0.0, 1e-12));
        CHECK(lt.total.value().all_finite());
    }
    SECTION("hand computation: uniform logits, C=2, eta=1 gives 2 ln 2") {
        Graph g;
        Var z = g.leaf(vec({0.0, 0.0}), true);
        auto lt = total_loss(z, 0, Tensor::from({2}, {0.5, 0.5}), 1.0);
        CHECK_THAT(lt.ce, Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
        CHECK_THAT(lt.bce, Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
        CHECK_THAT(lt.total.value().item(), Catch::Matchers::WithinAbs(2.0 * std::log(2.0), 1e-12));
    }
    SECTION("label smoothing reshapes the CE target") {
        Graph g;
        Var z = g.leaf(vec({0.3, -0.3}), true);
        auto smooth = total_loss(z, 0, std::nullopt, 0.0, 0.1);
        Graph g2;
        Var z2 = g2.leaf(vec({0.3, -0.3}), true);
        Var ref = cross_entropy(z2, Tensor::from({2}, {0.95, 0.05}));
        CHECK_THAT(smooth.total.value().item(), Catch::Matchers::WithinAbs(ref.value().item(), 1e-12));
    }
    SECTION("negative eta rejected") {
        Graph g;
        Var z = g.leaf(vec({0.0, 0.0}), true);
        CHECK_THROWS_AS(total_loss(z, 0, std::nullopt, -0.5), ContractError);
    }
}

TEST_CASE("eta schedule") {
    CHECK(eta_schedule(0, 50) == 0.0);
    CHECK(eta_schedule(49, 50) == 1.0);
    CHECK(eta_schedule(50, 101) == 0.5);
    CHECK(eta_schedule(0, 1) == 0.0);
    CHECK_THROWS_AS(eta_schedule(5, 5), ContractError);
}
