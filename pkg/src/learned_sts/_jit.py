"""Numba plumbing shared by the search kernels and model predictors."""

import os
import platform

import llvmlite.binding as llvm
import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

# LLVM's x86 pass rewrites cmov back into branches when it guesses the branch
# is predictable. Binary search on random queries is the worst case for that
# guess, so the branch-free kernels would silently become branchy again.
# Set LEARNED_STS_KEEP_CMOV_CONVERTER=1 to leave LLVM's default in place.
if platform.machine().lower() in ("x86_64", "amd64") and not os.environ.get(
    "LEARNED_STS_KEEP_CMOV_CONVERTER"
):
    llvm.set_option("", "--x86-cmov-converter=false")

# __builtin_prefetch(addr, 0, 0): read access, no temporal locality.
PREFETCH_RW = 0
PREFETCH_LOCALITY = 0


@intrinsic
def prefetch(typingctx, arr, idx):
    """Emit ``llvm.prefetch`` for ``&arr[idx]``.

    No bounds check is performed: prefetching an address past the end of the
    buffer is harmless on every target LLVM supports.
    """
    if not isinstance(arr, types.Array) or not isinstance(idx, types.Integer):
        return None
    sig = types.void(arr, idx)

    def codegen(context, builder, signature, args):
        arrty = signature.args[0]
        ary = context.make_array(arrty)(context, builder, args[0])
        i64 = ir.IntType(64)
        index = args[1]
        if index.type.width < 64:
            index = builder.sext(index, i64)
        itemsize = context.get_abi_sizeof(context.get_data_type(arrty.dtype))
        offset = builder.mul(index, ir.Constant(i64, itemsize))
        addr = builder.add(builder.ptrtoint(ary.data, i64), offset)
        i8p = ir.IntType(8).as_pointer()
        i32 = ir.IntType(32)
        fnty = ir.FunctionType(ir.VoidType(), [i8p, i32, i32, i32])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.prefetch.p0")
        builder.call(
            fn,
            [
                builder.inttoptr(addr, i8p),
                ir.Constant(i32, PREFETCH_RW),
                ir.Constant(i32, PREFETCH_LOCALITY),
                ir.Constant(i32, 1),
            ],
        )
        return context.get_dummy_value()

    return sig, codegen


@njit(inline="always")
def key_offset(x, key_min):
    """Signed distance ``x - key_min`` as float64 without unsigned wraparound."""
    if x >= key_min:
        return np.float64(x - key_min)
    return -np.float64(key_min - x)


@njit(inline="always")
def round_clamped(v, lo, hi):
    """Round-half-to-even ``v`` and clamp into ``[lo, hi]`` (ints)."""
    if v != v:
        return lo
    if v <= lo:
        return lo
    if v >= hi:
        return hi
    return np.int64(np.rint(v))
