"""Exact rational arithmetic helpers.

Small instances of the Hamiltonian algebra and the block matrices support an
exact mode in which all coefficients are Gaussian rationals (complex numbers
with Fraction real and imaginary parts) and the actions enter through the
substitution xi_i = eta_i**2 with rational eta.  Everything here is plain
Python; sizes are tiny (d <= 4, blocks of dimension <= d+1).
"""

from __future__ import annotations

from fractions import Fraction


class FC:
    """Complex number with exact rational real/imaginary parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = Fraction(re)
        self.im = Fraction(im)

    @staticmethod
    def coerce(x) -> "FC":
        if isinstance(x, FC):
            return x
        if isinstance(x, complex):
            return FC(Fraction(x.real), Fraction(x.imag))
        return FC(x)

    def __add__(self, other):
        o = FC.coerce(other)
        return FC(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __sub__(self, other):
        o = FC.coerce(other)
        return FC(self.re - o.re, self.im - o.im)

    def __rsub__(self, other):
        return FC.coerce(other) - self

    def __neg__(self):
        return FC(-self.re, -self.im)

    def __mul__(self, other):
        o = FC.coerce(other)
        return FC(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = FC.coerce(other)
        den = o.re * o.re + o.im * o.im
        if den == 0:
            raise ZeroDivisionError("division by zero FC")
        return FC((self.re * o.re + self.im * o.im) / den,
                  (self.im * o.re - self.re * o.im) / den)

    def conjugate(self):
        return FC(self.re, -self.im)

    def is_zero(self):
        return self.re == 0 and self.im == 0

    def __eq__(self, other):
        o = FC.coerce(other)
        return self.re == o.re and self.im == o.im

    def __hash__(self):
        return hash((self.re, self.im))

    def __abs__(self):
        return abs(complex(self))

    def __complex__(self):
        return complex(float(self.re), float(self.im))

    def __repr__(self):
        return f"FC({self.re!r}, {self.im!r})"


I_FC = FC(0, 1)


def as_complex(c) -> complex:
    return complex(c) if isinstance(c, FC) else complex(c)


def coeff_is_zero(c) -> bool:
    return c.is_zero() if isinstance(c, FC) else c == 0


def coeff_conj(c):
    return c.conjugate() if isinstance(c, FC) else c.conjugate()


def frac_matrix(rows):
    return [[Fraction(x) for x in row] for row in rows]


def mat_rank(rows) -> int:
    """Exact rank of a small integer/rational matrix by Gaussian elimination."""
    m = frac_matrix(rows)
    if not m:
        return 0
    nrows, ncols = len(m), len(m[0])
    rank = 0
    col = 0
    for col in range(ncols):
        piv = None
        for r in range(rank, nrows):
            if m[r][col] != 0:
                piv = r
                break
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        inv = 1 / m[rank][col]
        m[rank] = [x * inv for x in m[rank]]
        for r in range(nrows):
            if r != rank and m[r][col] != 0:
                f = m[r][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[rank])]
        rank += 1
        if rank == nrows:
            break
    return rank


def solve_exact(a_rows, b_vec):
    """Solve A x = b exactly for a square (or tall, consistent) rational system.

    Returns a list of Fractions, or None if the system is inconsistent.
    For underdetermined systems free variables are set to zero.
    """
    m = frac_matrix(a_rows)
    b = [Fraction(x) for x in b_vec]
    nrows = len(m)
    ncols = len(m[0]) if m else 0
    aug = [m[r] + [b[r]] for r in range(nrows)]
    rank = 0
    pivots = []
    for col in range(ncols):
        piv = None
        for r in range(rank, nrows):
            if aug[r][col] != 0:
                piv = r
                break
        if piv is None:
            continue
        aug[rank], aug[piv] = aug[piv], aug[rank]
        inv = 1 / aug[rank][col]
        aug[rank] = [x * inv for x in aug[rank]]
        for r in range(nrows):
            if r != rank and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[rank])]
        pivots.append(col)
        rank += 1
    for r in range(rank, nrows):
        if aug[r][ncols] != 0:
            return None
    x = [Fraction(0)] * ncols
    for r, col in enumerate(pivots):
        x[col] = aug[r][ncols]
    return x


def char_poly_exact(mat):
    """Characteristic polynomial coefficients of a small rational matrix.

    Faddeev-LeVerrier; returns [c_0 .. c_n] with p(t) = sum c_j t^j and
    c_n = 1.
    """
    n = len(mat)
    a = frac_matrix(mat)
    coeffs = [Fraction(0)] * (n + 1)
    coeffs[n] = Fraction(1)
    m = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{n-k+1} I
        if k == 1:
            m = [[Fraction(1) if i == j else Fraction(0) for j in range(n)]
                 for i in range(n)]
        else:
            am = [[sum(a[i][t] * m[t][j] for t in range(n)) for j in range(n)]
                  for i in range(n)]
            for i in range(n):
                am[i][i] += coeffs[n - k + 1]
            m = am
        tr = sum(sum(a[i][t] * m[t][i] for t in range(n)) for i in range(n))
        coeffs[n - k] = -tr / k
    return coeffs
