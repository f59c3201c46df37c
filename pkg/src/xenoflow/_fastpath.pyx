# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernels: per-packet classification, the FIFO recurrence and
the five-tuple CRC.  Bit-identical to xenoflow._purepath."""

import numpy as np

from libc.stdint cimport int8_t, int32_t, int64_t, uint8_t, uint32_t, uint64_t

BACKEND_NAME = "compiled"

VERDICT_EGRESS = 0
VERDICT_SLOW = 1
VERDICT_DROP = 2


def crc32_columns(table, ip_src, ip_dst, ip_proto, udp_src, udp_dst):
    cdef uint32_t[::1] tab = np.ascontiguousarray(table, dtype=np.uint32)
    cdef int64_t[::1] a = np.ascontiguousarray(ip_src, dtype=np.int64)
    cdef int64_t[::1] b = np.ascontiguousarray(ip_dst, dtype=np.int64)
    cdef int64_t[::1] c = np.ascontiguousarray(ip_proto, dtype=np.int64)
    cdef int64_t[::1] d = np.ascontiguousarray(udp_src, dtype=np.int64)
    cdef int64_t[::1] e = np.ascontiguousarray(udp_dst, dtype=np.int64)
    cdef Py_ssize_t n = a.shape[0]
    out = np.empty(n, dtype=np.uint32)
    cdef uint32_t[::1] o = out
    cdef Py_ssize_t i
    cdef uint32_t crc
    cdef uint64_t sa, sb, sd, se
    cdef int k
    for i in range(n):
        crc = 0xFFFFFFFFu
        sa = <uint64_t>a[i]
        sb = <uint64_t>b[i]
        sd = <uint64_t>d[i]
        se = <uint64_t>e[i]
        for k in range(4):
            crc = (crc >> 8) ^ tab[(crc ^ ((sa >> (24 - 8 * k)) & 0xFF)) & 0xFF]
        for k in range(4):
            crc = (crc >> 8) ^ tab[(crc ^ ((sb >> (24 - 8 * k)) & 0xFF)) & 0xFF]
        crc = (crc >> 8) ^ tab[(crc ^ (<uint64_t>c[i] & 0xFF)) & 0xFF]
        crc = (crc >> 8) ^ tab[(crc ^ ((sd >> 8) & 0xFF)) & 0xFF]
        crc = (crc >> 8) ^ tab[(crc ^ (sd & 0xFF)) & 0xFF]
        crc = (crc >> 8) ^ tab[(crc ^ ((se >> 8) & 0xFF)) & 0xFF]
        crc = (crc >> 8) ^ tab[(crc ^ (se & 0xFF)) & 0xFF]
        o[i] = crc ^ 0xFFFFFFFFu
    return out


def classify(prog, cols, parse_ok, hash_col, arrival_ns):
    fields_arr = np.ascontiguousarray(cols, dtype=np.int64).copy()
    cdef int64_t[:, ::1] fields = fields_arr
    cdef uint8_t[::1] ok = np.ascontiguousarray(parse_ok, dtype=np.uint8)
    cdef uint32_t[::1] hashes = np.ascontiguousarray(hash_col, dtype=np.uint32)
    cdef int64_t[::1] times = np.ascontiguousarray(arrival_ns, dtype=np.int64)

    cdef int32_t[::1] entry_start = prog.pipe_entry_start
    cdef int32_t[::1] miss_kind = prog.pipe_miss_kind
    cdef int32_t[::1] miss_arg = prog.pipe_miss_arg
    cdef int64_t[::1] active_ns = prog.entry_active_ns
    cdef int32_t[::1] fwd_kind = prog.entry_fwd_kind
    cdef int32_t[::1] fwd_arg = prog.entry_fwd_arg
    cdef int32_t[::1] m_start = prog.match_start
    cdef int32_t[::1] m_field = prog.match_field
    cdef int64_t[::1] m_mask = prog.match_mask
    cdef int64_t[::1] m_value = prog.match_value
    cdef int32_t[::1] a_start = prog.act_start
    cdef int32_t[::1] a_kind = prog.act_kind
    cdef int32_t[::1] a_field = prog.act_field
    cdef int64_t[::1] a_value = prog.act_value

    cdef int root = prog.root
    cdef int max_hops = prog.max_hops
    cdef Py_ssize_t n = fields.shape[0]

    verdict_arr = np.full(n, -1, dtype=np.int8)
    egress_arr = np.full(n, -1, dtype=np.int32)
    fired_arr = np.full((n, max_hops), -1, dtype=np.int32)
    cdef int8_t[::1] verdict = verdict_arr
    cdef int32_t[::1] egress = egress_arr
    cdef int32_t[:, ::1] fired = fired_arr

    cdef Py_ssize_t i
    cdef int pipe, hop, e, j, found, kind, arg
    cdef int64_t t
    for i in range(n):
        if not ok[i]:
            verdict[i] = VERDICT_SLOW
            continue
        t = times[i]
        pipe = root
        for hop in range(max_hops):
            found = -1
            for e in range(entry_start[pipe], entry_start[pipe + 1]):
                if active_ns[e] > t:
                    continue
                for j in range(m_start[e], m_start[e + 1]):
                    if (fields[i, m_field[j]] & m_mask[j]) != m_value[j]:
                        break
                else:
                    found = e
                    break
            if found >= 0:
                for j in range(a_start[found], a_start[found + 1]):
                    if a_kind[j] == 1:
                        fields[i, a_field[j]] = <int64_t>(
                            hashes[i] % <uint32_t>a_value[j])
                    else:
                        fields[i, a_field[j]] = a_value[j]
                fired[i, hop] = found
                kind = fwd_kind[found]
                arg = fwd_arg[found]
            else:
                kind = miss_kind[pipe]
                arg = miss_arg[pipe]
            if kind == 1:  # pipe
                pipe = arg
                continue
            if kind == 0:  # port
                verdict[i] = VERDICT_EGRESS
                egress[i] = arg
            elif kind == 2:
                verdict[i] = VERDICT_SLOW
            else:
                verdict[i] = VERDICT_DROP
            break
        if verdict[i] == -1:  # hop-limit loop guard
            verdict[i] = VERDICT_DROP
    return verdict_arr, egress_arr, fired_arr


def accumulate(fired, counted_mask, frame_len, n_entries):
    packets = np.zeros(n_entries, dtype=np.int64)
    nbytes = np.zeros(n_entries, dtype=np.int64)
    if n_entries == 0:
        return packets, nbytes
    cdef int32_t[:, ::1] f = np.ascontiguousarray(fired, dtype=np.int32)
    cdef uint8_t[::1] inc = np.ascontiguousarray(counted_mask, dtype=np.uint8)
    cdef int64_t[::1] flen = np.ascontiguousarray(frame_len, dtype=np.int64)
    cdef int64_t[::1] p = packets
    cdef int64_t[::1] b = nbytes
    cdef Py_ssize_t i, h
    cdef int e
    for i in range(f.shape[0]):
        if not inc[i]:
            continue
        for h in range(f.shape[1]):
            e = f[i, h]
            if e >= 0:
                p[e] += 1
                b[e] += flen[i]
    return packets, nbytes


def fifo(times, p, q, depth, window_end):
    cdef int64_t[::1] t_arr = np.ascontiguousarray(times, dtype=np.int64)
    cdef Py_ssize_t m = t_arr.shape[0]
    start_arr = np.full(m, -1, dtype=np.int64)
    finish_arr = np.full(m, -1, dtype=np.int64)
    cdef int64_t[::1] start = start_arr
    cdef int64_t[::1] finish = finish_arr
    ring_arr = np.zeros(depth, dtype=np.int64)
    cdef int64_t[::1] ring = ring_arr
    cdef int64_t cp = p, cq = q, we = window_end
    cdef int cdepth = depth
    cdef int64_t t0 = 0, k = 0, admitted = 0, last_finish = -1, f, t, s
    cdef int64_t delivered = 0, dropped = 0
    cdef Py_ssize_t i
    for i in range(m):
        t = t_arr[i]
        if t >= last_finish:
            t0 = t
            k = 0
        elif admitted >= cdepth and ring[(admitted - cdepth) % cdepth] > t:
            dropped += 1
            continue
        if k == 0:
            s = t
        else:
            s = t0 + (k * cp) // cq
            if t > s:
                s = t
        start[i] = s
        k += 1
        f = t0 + (k * cp) // cq
        finish[i] = f
        ring[admitted % cdepth] = f
        admitted += 1
        last_finish = f
        if f <= we:
            delivered += 1
    return start_arr, finish_arr, int(delivered), int(admitted - delivered), \
        int(dropped)
