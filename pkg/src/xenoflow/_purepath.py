"""Pure-Python/numpy batch kernels.

Fallback for the compiled extension in ``_fastpath``; both implement the same
integer arithmetic and must produce bit-identical results.  Classification is
vectorized over packet columns; the queue recurrence is a plain Python loop.
"""

import numpy as np

BACKEND_NAME = "pure"

VERDICT_EGRESS = 0
VERDICT_SLOW = 1
VERDICT_DROP = 2

_CRC_INIT = np.uint32(0xFFFFFFFF)


def crc32_columns(table, ip_src, ip_dst, ip_proto, udp_src, udp_dst):
    """Vectorized CRC-32 over the 13-byte network-order five-tuple."""
    crc = np.full(len(ip_src), _CRC_INIT, dtype=np.uint32)
    cols = (ip_src >> 24, ip_src >> 16, ip_src >> 8, ip_src,
            ip_dst >> 24, ip_dst >> 16, ip_dst >> 8, ip_dst,
            ip_proto, udp_src >> 8, udp_src, udp_dst >> 8, udp_dst)
    tab = np.asarray(table, dtype=np.uint32)
    for col in cols:
        byte = np.asarray(col, dtype=np.uint32) & np.uint32(0xFF)
        crc = (crc >> np.uint32(8)) ^ tab[(crc ^ byte) & np.uint32(0xFF)]
    return crc ^ _CRC_INIT


def classify(prog, cols, parse_ok, hash_col, arrival_ns):
    """Walk every packet through the pipe tree.

    cols: int64[n, N_FIELDS] field values (meta columns zeroed); mutated copies
    are used internally so callers keep their arrays.
    Returns (verdict int8[n], egress_port int32[n], fired int32[n, max_hops]).
    """
    n = cols.shape[0]
    fields = cols.copy()
    verdict = np.full(n, -1, dtype=np.int8)
    egress = np.full(n, -1, dtype=np.int32)
    fired = np.full((n, prog.max_hops), -1, dtype=np.int32)
    cur_pipe = np.full(n, prog.root, dtype=np.int32)
    bad = ~parse_ok
    verdict[bad] = VERDICT_SLOW
    cur_pipe[bad] = -1

    es, ms, as_ = prog.pipe_entry_start, prog.match_start, prog.act_start
    for hop in range(prog.max_hops):
        live = np.nonzero(verdict == -1)[0]
        if live.size == 0:
            break
        for pid in np.unique(cur_pipe[live]):
            idx = live[cur_pipe[live] == pid]
            fired_e = np.full(idx.size, -1, dtype=np.int64)
            open_ = np.ones(idx.size, dtype=bool)
            for e in range(es[pid], es[pid + 1]):
                if not open_.any():
                    break
                m = open_ & (arrival_ns[idx] >= prog.entry_active_ns[e])
                for j in range(ms[e], ms[e + 1]):
                    fid = prog.match_field[j]
                    m &= (fields[idx, fid] & prog.match_mask[j]) == \
                        prog.match_value[j]
                fired_e[m] = e
                open_ &= ~m
            # actions + forwards per fired entry
            for e in np.unique(fired_e[fired_e >= 0]):
                sel = idx[fired_e == e]
                for j in range(as_[e], as_[e + 1]):
                    fid = prog.act_field[j]
                    if prog.act_kind[j] == 1:  # five-tuple hash
                        fields[sel, fid] = (hash_col[sel] %
                                            np.uint32(prog.act_value[j])).astype(np.int64)
                    else:
                        fields[sel, fid] = prog.act_value[j]
                fired[sel, hop] = e
                _dispatch(sel, prog.entry_fwd_kind[e], prog.entry_fwd_arg[e],
                          verdict, egress, cur_pipe)
            missed = idx[fired_e < 0]
            if missed.size:
                _dispatch(missed, prog.pipe_miss_kind[pid],
                          prog.pipe_miss_arg[pid], verdict, egress, cur_pipe)
    verdict[verdict == -1] = VERDICT_DROP  # hop-limit loop guard
    return verdict, egress, fired


def _dispatch(sel, kind, arg, verdict, egress, cur_pipe):
    if kind == 0:  # port
        verdict[sel] = VERDICT_EGRESS
        egress[sel] = arg
    elif kind == 1:  # pipe
        cur_pipe[sel] = arg
    elif kind == 2:
        verdict[sel] = VERDICT_SLOW
    else:
        verdict[sel] = VERDICT_DROP


def accumulate(fired, counted_mask, frame_len, n_entries):
    """Per-entry (packets, bytes) deltas over the included packets."""
    if n_entries == 0 or fired.size == 0:
        return (np.zeros(n_entries, dtype=np.int64),
                np.zeros(n_entries, dtype=np.int64))
    sub = fired[counted_mask]
    flen = np.broadcast_to(np.asarray(frame_len, dtype=np.int64)[counted_mask, None],
                           sub.shape)
    flat = sub.ravel()
    keep = flat >= 0
    flat = flat[keep]
    packets = np.bincount(flat, minlength=n_entries).astype(np.int64)
    nbytes = np.bincount(flat, weights=flen.ravel()[keep],
                         minlength=n_entries).astype(np.int64)
    return packets, nbytes


def fifo(times, p, q, depth, window_end):
    """Single-server FIFO with deterministic service interval p/q ns.

    Busy periods are anchored at their first arrival; the k-th departure of a
    busy period starting at T0 is T0 + (k*p)//q, which keeps cumulative service
    exact (no per-packet rounding drift).  A packet arriving while `depth`
    packets are in the system is dropped.

    Returns (start int64[m], finish int64[m] with -1 for drops,
             delivered_in_window, residual_at_window, dropped).
    """
    m = len(times)
    start = np.full(m, -1, dtype=np.int64)
    finish = np.full(m, -1, dtype=np.int64)
    ring = [0] * depth
    t0 = 0
    k = 0
    admitted = 0
    last_finish = -1
    dropped = 0
    tl = times.tolist()
    p = int(p)
    q = int(q)
    we = int(window_end)
    delivered = 0
    for i in range(m):
        t = tl[i]
        if t >= last_finish:
            t0 = t
            k = 0
        elif admitted >= depth and ring[(admitted - depth) % depth] > t:
            dropped += 1
            continue
        start[i] = t if k == 0 else max(t, t0 + (k * p) // q)
        k += 1
        f = t0 + (k * p) // q
        finish[i] = f
        ring[admitted % depth] = f
        admitted += 1
        last_finish = f
        if f <= we:
            delivered += 1
    return start, finish, delivered, admitted - delivered, dropped
