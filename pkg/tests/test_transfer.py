import numpy as np
import pytest

from maskcl.masks import select_mask
from maskcl.network import NetworkConfig, forward, init_network, start_task
from maskcl.similarity import compute_basis
from maskcl.transfer import (
    AlignmentRecord,
    SubspaceMemory,
    align_initial_gradients,
    backward_transfer_step,
    bi_objective_grad,
    bi_objective_loss,
    build_subspace_memory,
    merge_bases,
    project_orthogonal,
)

from test_network import make_random_instance, finite_diff_array, rel_err
from test_similarity import matrix_with_singular_values


def memory(cols, owner=0):
    basis = np.asarray(cols, dtype=np.float64).T
    return SubspaceMemory(owner_task=owner, basis=basis, k=basis.shape[1])


def e(i, dim=3):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


class TestAlignment:
    def test_sum(self):
        rec = AlignmentRecord(new_task=2, donor_task=1)
        assert align_initial_gradients(rec, [np.array([[0.2]])], [np.array([[-0.1]])])[0] == (
            pytest.approx(np.array([[0.1]]))
        )
        assert rec.applied

    def test_zero_donor_keeps_gradient(self):
        rec = AlignmentRecord(new_task=2, donor_task=1)
        g = np.array([[0.5, -0.3]])
        out = align_initial_gradients(rec, [g], [np.zeros_like(g)])
        assert np.array_equal(out[0], g)

    def test_both_zero(self):
        rec = AlignmentRecord(new_task=2, donor_task=1)
        out = align_initial_gradients(rec, [np.zeros((2, 2))], [np.zeros((2, 2))])
        assert np.all(out[0] == 0)

    def test_second_invocation_rejected(self):
        rec = AlignmentRecord(new_task=2, donor_task=1)
        align_initial_gradients(rec, [np.zeros((1, 1))], [np.zeros((1, 1))])
        with pytest.raises(RuntimeError):
            align_initial_gradients(rec, [np.zeros((1, 1))], [np.zeros((1, 1))])


class TestBiObjectiveLoss:
    def test_half_probability_identical_heads(self):
        # two equal logits give p = 0.5; identical heads contribute zero
        head = np.array([[1.0, 2.0]])
        loss = bi_objective_loss(np.array([[3.0, 3.0]]), [0], head, [head.copy()])
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_orthogonal_heads_perfect_prediction(self):
        logits = np.array([[40.0, 0.0]])
        loss = bi_objective_loss(logits, [0], np.array([[1.0, 0.0]]),
                                 [np.array([[0.0, 1.0]])])
        assert loss == pytest.approx(1.0, abs=1e-12)

    def test_two_heads_averaged(self):
        logits = np.array([[40.0, 0.0]])
        new = np.array([[1.0, 0.0]])
        loss = bi_objective_loss(logits, [0], new,
                                 [new.copy(), np.array([[0.0, 1.0]])])
        assert loss == pytest.approx(0.5, abs=1e-12)

    def test_zero_norm_head_rejected(self):
        with pytest.raises(ValueError):
            bi_objective_loss(np.array([[1.0, 0.0]]), [0], np.zeros((1, 2)),
                              [np.ones((1, 2))])


class TestBiObjectiveGrad:
    def test_identical_heads_cosine_stationary(self):
        net, mask, batch, labels, trace = make_random_instance(0)
        start_task(net, 1)
        net.heads[1] = net.heads[0].copy()
        d_new, d_priors = bi_objective_grad(net, mask, 0, batch, labels, [1])
        d_new_plain, _ = bi_objective_grad(net, mask, 0, batch, labels, [])
        assert np.allclose(d_new, d_new_plain, atol=1e-12)
        assert np.allclose(d_priors[1], 0.0, atol=1e-12)

    def test_matches_finite_differences(self):
        for seed in range(20):
            net, mask, batch, labels, trace = make_random_instance(seed)
            start_task(net, 1)
            start_task(net, 2)
            sim = [1, 2]
            d_new, d_priors = bi_objective_grad(net, mask, 0, batch, labels, sim)

            def loss():
                t = forward(net, mask, head=0, batch=batch)
                return bi_objective_loss(t.logits, labels, net.heads[0],
                                         [net.heads[j] for j in sim])

            assert rel_err(d_new, finite_diff_array(loss, net.heads[0])) <= 1e-4
            for j in sim:
                assert rel_err(d_priors[j], finite_diff_array(loss, net.heads[j])) <= 1e-4

    def test_prior_grad_is_cosine_only(self):
        net, mask, batch, labels, trace = make_random_instance(3)
        start_task(net, 1)
        _, d_priors = bi_objective_grad(net, mask, 0, batch, labels, [1])

        def cos_term():
            wt = net.heads[0].ravel()
            wj = net.heads[1].ravel()
            return 1.0 - wt @ wj / (np.linalg.norm(wt) * np.linalg.norm(wj))

        fd = finite_diff_array(cos_term, net.heads[1])
        assert rel_err(d_priors[1], fd) <= 1e-4


class TestSubspaceMemory:
    def test_rank_one(self):
        rep = np.outer(np.arange(1.0, 5.0), [1.0, 0.5, 0.25])

        class T:
            representation = rep

        mem = build_subspace_memory(T(), owner_task=3)
        assert mem.k == 1
        assert mem.owner_task == 3

    def test_orthogonal_basis(self):
        class T:
            representation = np.random.default_rng(1).standard_normal((20, 6))

        mem = build_subspace_memory(T(), owner_task=0)
        gram = mem.basis.T @ mem.basis
        assert np.max(np.abs(gram - np.eye(mem.k))) <= 1e-6

    def test_energy_rule_matches_compute_basis(self):
        rep = matrix_with_singular_values([9.9, 1.0, 0.1], rows=25, cols=7, seed=9)

        class T:
            representation = rep

        mem = build_subspace_memory(T(), owner_task=0, eps_th=0.99)
        assert mem.k == compute_basis(rep, 0.99).k == 2

    def test_zero_representation_rejected(self):
        class T:
            representation = np.zeros((5, 4))

        with pytest.raises(ValueError):
            build_subspace_memory(T(), owner_task=0)


class TestProjection:
    def test_axis_projection(self):
        out = project_orthogonal(np.array([1.0, 1.0]), [memory([e(0, 2)])])
        assert np.allclose(out, [0.0, 1.0])

    def test_grad_in_span_goes_to_zero(self):
        mem = memory([e(0), e(1)])
        out = project_orthogonal(np.array([2.0, -3.0, 0.0]), [mem])
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_orthogonal_grad_unchanged(self):
        mem = memory([e(0)])
        g = np.array([0.0, 1.5, -2.0])
        assert np.allclose(project_orthogonal(g, [mem]), g)

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        q, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        mem = memory(q.T)
        g = rng.standard_normal(6)
        once = project_orthogonal(g, [mem])
        twice = project_orthogonal(once, [mem])
        assert np.max(np.abs(once - twice)) <= 1e-9

    def test_never_increases_norm(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            q, _ = np.linalg.qr(rng.standard_normal((5, 3)))
            mem = memory(q.T)
            g = rng.standard_normal(5)
            assert np.linalg.norm(project_orthogonal(g, [mem])) <= np.linalg.norm(g) + 1e-12

    def test_matrix_rows_projected(self):
        mem = memory([e(0)])
        g = np.array([[1.0, 2.0, 0.0], [3.0, 0.0, 1.0]])
        out = project_orthogonal(g, [mem])
        assert np.allclose(out, [[0.0, 2.0, 0.0], [0.0, 0.0, 1.0]])

    def test_merge_drops_dependent_vectors(self):
        m1 = memory([e(0), e(1)])
        m2 = memory([e(0)])  # fully contained in m1
        merged = merge_bases([m1, m2])
        assert merged.shape[1] == 2

    def test_no_memories(self):
        g = np.array([1.0, 2.0])
        assert np.array_equal(project_orthogonal(g, []), g)


class TestBackwardTransferStep:
    def setup_net(self, seed=0, priors=3):
        cfg = NetworkConfig(layer_sizes=(4, 3), head_size=2, max_tasks=8, seed=seed)
        net = init_network(cfg)
        for t in range(priors + 1):
            start_task(net, t)
        return net

    def test_all_priors_similar_is_plain_step(self):
        net = self.setup_net()
        ref = self.setup_net()
        backward_transfer_step(net, task=3, sim_set=[0, 1, 2], memories=[], lr=0.1)
        from maskcl.transfer import _cosine_grads

        wt = ref.heads[3].ravel()
        for j in [0, 1, 2]:
            dwj, _ = _cosine_grads(ref.heads[j].ravel(), wt)
            expect = ref.heads[j] - 0.1 * (-dwj / 3).reshape(ref.heads[j].shape)
            assert np.allclose(net.heads[j], expect)

    def test_gradient_inside_protected_subspace_freezes_head(self):
        net = self.setup_net()
        before = net.heads[0].copy()
        # protect the whole representation space: update must vanish
        mems = [memory([e(0), e(1), e(2)], owner=2)]
        backward_transfer_step(net, task=3, sim_set=[0], memories=mems, lr=0.5)
        assert np.allclose(net.heads[0], before, atol=1e-12)

    def test_update_orthogonal_to_protected_basis(self):
        rng = np.random.default_rng(4)
        net = self.setup_net(seed=5)
        q, _ = np.linalg.qr(rng.standard_normal((3, 2)))
        mems = [memory(q.T, owner=2)]
        before = {j: net.heads[j].copy() for j in [0, 1]}
        backward_transfer_step(net, task=3, sim_set=[0, 1], memories=mems, lr=0.2)
        for j in [0, 1]:
            delta = net.heads[j] - before[j]
            assert np.max(np.abs(delta @ q)) <= 1e-6

    def test_only_heads_move(self):
        net = self.setup_net()
        w_before = [w.copy() for w in net.weights]
        s_before = [s.copy() for s in net.scores]
        b_before = [b.copy() for b in net.biases[0]]
        backward_transfer_step(net, task=3, sim_set=[0, 1], memories=[], lr=0.1)
        assert all(np.array_equal(a, b) for a, b in zip(net.weights, w_before))
        assert all(np.array_equal(a, b) for a, b in zip(net.scores, s_before))
        assert all(np.array_equal(a, b) for a, b in zip(net.biases[0], b_before))

    def test_empty_sim_set_rejected(self):
        net = self.setup_net()
        with pytest.raises(ValueError):
            backward_transfer_step(net, task=3, sim_set=[], memories=[], lr=0.1)
