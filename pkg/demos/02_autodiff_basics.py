"""Tour of the reverse-mode autodiff core.

Builds a small expression, records it on a tape, backpropagates, and checks
the analytic gradient against central differences.  Then fits a toy least
squares problem with Adam under a cyclic learning rate, the same optimizer
setup the real models train with.
"""

import numpy as np

from bepredict import numcore as nc
from bepredict.numcore import RngStream, Tape, Tensor


def expression_demo():
    rng = RngStream(0, "demo")
    w = Tensor(rng.normal((3, 2)), requires_grad=True)
    x = Tensor(rng.normal((4, 3)))

    with Tape():
        h = nc.relu(nc.matmul(x, w))
        p = nc.softmax(h, axis=1)
        loss = nc.tensor_mean(nc.mul(p, p))
        nc.backward(loss)

    print("loss:", float(loss.data))
    print("dloss/dw:")
    print(w.grad)

    # the same gradient, measured numerically
    err = nc.grad_check(
        lambda t: nc.tensor_mean(
            nc.mul(
                nc.softmax(nc.relu(nc.matmul(x, t)), axis=1),
                nc.softmax(nc.relu(nc.matmul(x, t)), axis=1),
            )
        ),
        w,
    )
    print(f"worst relative error vs central differences: {err:.3g}")
    print()


def adam_demo():
    rng = RngStream(1, "fit")
    true_w = np.array([[2.0], [-3.0], [0.5]])
    x = rng.normal((64, 3))
    y = x @ true_w

    w = Tensor(np.zeros((3, 1)), requires_grad=True)
    xt, yt = Tensor(x), Tensor(y)
    state = nc.AdamState.for_params([w])

    print("fitting y = Xw with Adam, triangular cyclic learning rate")
    for step in range(200):
        with Tape():
            resid = nc.sub(nc.matmul(xt, w), yt)
            loss = nc.tensor_mean(nc.mul(resid, resid))
            nc.backward(loss)
        lr = nc.cyclic_lr(step, base_lr=0.01, max_lr=0.05, cycle_len=40)
        nc.adam_step([w], state, lr)
        nc.zero_grads([w])
        if step % 50 == 0 or step == 199:
            print(f"  step {step:3d}  lr {lr:.4f}  loss {float(loss.data):.6f}")

    print("recovered weights:", np.round(w.data.ravel(), 4))
    print("true weights:     ", true_w.ravel())


def main():
    expression_demo()
    adam_demo()


if __name__ == "__main__":
    main()
