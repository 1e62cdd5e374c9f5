import numpy as np

from bitemporal.rng import philox4x32, uniforms


def _block(counter, key):
    return [int(x) for x in philox4x32([np.uint64(c) for c in counter], key)]


def test_philox_known_answers():
    # reference vectors published with the Random123 library
    assert _block((0, 0, 0, 0), (0, 0)) == [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]
    full = 0xFFFFFFFF
    assert _block((full,) * 4, (full, full)) == [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]
    assert _block((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0)) == [
        0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1,
    ]


def test_uniforms_are_pure_functions_of_their_coordinates():
    paths = np.arange(1000)
    u1, v1 = uniforms(42, 0, paths, 3)
    u2, _ = uniforms(42, 0, paths[::-1], 3)
    np.testing.assert_array_equal(u1, u2[::-1])
    assert np.all((u1 > 0) & (u1 < 1) & (v1 > 0) & (v1 < 1))
    other, _ = uniforms(42, 1, paths, 3)
    assert not np.any(other == u1)


def test_uniform_moments():
    u, v = uniforms(7, 0, np.arange(200000), 0)
    assert abs(u.mean() - 0.5) < 0.003
    assert abs(np.corrcoef(u, v)[0, 1]) < 0.01
