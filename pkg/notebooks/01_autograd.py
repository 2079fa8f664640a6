# %% [markdown]
# # The autograd engine
#
# Every layer in the package is built from a small reverse-mode engine over
# numpy arrays.  Tensors default to float32; `shadow_precision()` switches new
# tensors to float64, which is what the finite-difference checks use.

# %%
import numpy as np

from segimgnet.autograd import Tensor, ops, shadow_precision
from segimgnet.autograd.gradcheck import check_gradients

x = Tensor([[1.0, -2.0, 3.0]], requires_grad=True)
y = (ops.gelu(x) * x).sum()
y.backward()
print("value", y.item())
print("grad ", x.grad)

# %% [markdown]
# A convolution, checked against central differences in float64.

# %%
rng = np.random.default_rng(0)
with shadow_precision():
    inp = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.3, requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)

    def loss():
        out = ops.conv2d(inp, w, b, stride=2, padding=1)
        return (out * out).sum()

    print("conv2d relative gradient error", check_gradients(loss, [inp, w, b]))

# %% [markdown]
# Depthwise convolution is the `groups == channels` case.

# %%
dw = Tensor(rng.standard_normal((3, 1, 7, 7)).astype(np.float32))
out = ops.conv2d(Tensor(rng.random((1, 3, 16, 16)).astype(np.float32)), dw, None, 1, 3, groups=3)
print(out.shape, out.dtype)
