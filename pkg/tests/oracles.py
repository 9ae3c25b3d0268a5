"""Independent reference implementations: plain Python loops, no vectorisation."""

import math


def sqdist(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def nn_index(q, S):
    best, best_d = 0, math.inf
    for j, s in enumerate(S):
        d = sqdist(q, s)
        if d < best_d:
            best, best_d = j, d
    return best, best_d


def avg_nn(S1, S2):
    return sum(nn_index(a, S2)[1] for a in S1) / len(S1)


def max_nn(S1, S2):
    return max(nn_index(a, S2)[1] for a in S1)


def chamfer(S1, S2):
    return avg_nn(S1, S2) + avg_nn(S2, S1)


def sampling_loss(Q, P, beta, gamma, delta):
    return avg_nn(Q, P) + beta * max_nn(Q, P) + (gamma + delta * len(Q)) * avg_nn(P, Q)


def greedy_fps(P, m, start=0):
    chosen = [start]
    while len(chosen) < m:
        best, best_d = None, -1.0
        for i, p in enumerate(P):
            if i in chosen:
                continue
            d = min(sqdist(p, P[j]) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def min_pairwise(P, idx):
    return min(sqdist(P[i], P[j]) for a, i in enumerate(idx) for j in idx[a + 1:])


def softmax(row):
    top = max(row)
    e = [math.exp(v - top) for v in row]
    s = sum(e)
    return [v / s for v in e]


def adam_scalar(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def one_nn_chamfer_accuracy(train, train_labels, test, test_labels):
    hits = 0
    for x, y in zip(test, test_labels):
        best = min(range(len(train)), key=lambda i: chamfer_fast(x, train[i]))
        hits += int(train_labels[best] == y)
    return hits / len(test)


def chamfer_fast(a, b):
    # takes numpy arrays: pure loops over 512x512 pairs are too slow for the 1-NN data check
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return d.min(1).mean() + d.min(0).mean()
