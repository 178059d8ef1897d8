#!/usr/bin/env python3
"""
Núcleo de redes: arquitecturas vanilla / ResNet / DenseNet con las escalas
exactas de inicialización, muestreo de pesos, forward con traza completa y
redes reducidas (se eliminan las conexiones que rodean a un peso W^k).

Convenciones:
- Sin biases. Ancho constante n en todas las capas ocultas.
- Activación q = √2·max(0, y); máscara z = 1[y > 0] (preactivación 0 → máscara 0).
- Todas las operaciones aceptan un eje de batch delante de los pesos
  (draws Monte Carlo) y un eje de entradas P delante de cada vector:
  pesos (..., filas, cols), activaciones (..., P, dim).
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from .errors import InvalidIndex, InvalidSpec, ShapeMismatch, ZeroInput
from .numerics import RngStream

ACT_GAIN = math.sqrt(2.0)


class ArchKind(Enum):
    """Familias de arquitectura soportadas"""
    VANILLA = "vanilla"
    RESNET = "resnet"
    DENSENET = "densenet"


class WeightRole(Enum):
    """Papel de una matriz de pesos dentro de la red"""
    INITIAL = "initial"
    BODY = "body"
    FINAL = "final"


_ROLE_ORDER = {WeightRole.INITIAL: 0, WeightRole.BODY: 1, WeightRole.FINAL: 2}


@dataclass(frozen=True)
class WeightIndex:
    """Índice k = (l_k, h_k) de una matriz; las proyecciones usan su rol"""
    layer: int = 0
    sublayer: int = 0
    role: WeightRole = WeightRole.BODY

    @classmethod
    def initial(cls) -> "WeightIndex":
        return cls(0, 0, WeightRole.INITIAL)

    @classmethod
    def final(cls) -> "WeightIndex":
        return cls(0, 0, WeightRole.FINAL)

    @property
    def is_projection(self) -> bool:
        return self.role is not WeightRole.BODY

    @property
    def label(self) -> str:
        if self.role is WeightRole.INITIAL:
            return "W0"
        if self.role is WeightRole.FINAL:
            return "Wf"
        return f"W[{self.layer},{self.sublayer}]"

    def sort_key(self) -> Tuple[int, int, int]:
        return (_ROLE_ORDER[self.role], self.layer, self.sublayer)

    def csv_fields(self) -> Tuple[Any, Any]:
        """(k_layer, k_sublayer) para los CSV de resultados"""
        if self.role is WeightRole.BODY:
            return self.layer, self.sublayer
        return self.role.value, ""

    def to_dict(self) -> Dict[str, Any]:
        return {"layer": self.layer, "sublayer": self.sublayer, "role": self.role.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WeightIndex":
        role = WeightRole(data.get("role", WeightRole.BODY.value))
        return cls(int(data.get("layer", 0)), int(data.get("sublayer", 0)), role)

    @classmethod
    def parse(cls, text: str) -> "WeightIndex":
        """Parsea 'initial', 'final', 'l' o 'l,h'"""
        token = str(text).strip().lower()
        if token in ("initial", "w0"):
            return cls.initial()
        if token in ("final", "wf"):
            return cls.final()
        parts = [p for p in token.replace(":", ",").split(",") if p.strip()]
        try:
            numbers = [int(p) for p in parts]
        except ValueError as exc:
            raise InvalidIndex(f"índice de peso no reconocido: '{text}'") from exc
        if len(numbers) == 1:
            return cls(numbers[0], 0)
        if len(numbers) == 2:
            return cls(numbers[0], numbers[1])
        raise InvalidIndex(f"índice de peso no reconocido: '{text}'")


class KernelScope(Enum):
    """Qué matrices entran en la suma del NTK"""
    FULL = "full"          # todas las matrices
    BODY = "body"          # solo el cuerpo W^{l,h}
    NO_INPUT = "no_input"  # todas salvo W^0

    def includes(self, k: WeightIndex) -> bool:
        if self is KernelScope.FULL:
            return True
        if self is KernelScope.BODY:
            return k.role is WeightRole.BODY
        return k.role is not WeightRole.INITIAL


@dataclass(frozen=True)
class ArchitectureSpec:
    """Especificación de arquitectura (sin validar hasta pasar por build_arch)"""
    kind: ArchKind
    input_dim: int
    depth: int
    width: int
    branch_depth: int = 2
    alphas: Tuple[float, ...] = ()
    alpha: Optional[float] = None
    reduction: Optional[WeightIndex] = None

    @property
    def is_reduced(self) -> bool:
        return self.reduction is not None

    def alpha_summary(self) -> str:
        if self.kind is ArchKind.RESNET and self.alphas:
            first = self.alphas[0]
            if all(a == first for a in self.alphas):
                return f"{first!r}x{len(self.alphas)}"
            return ";".join(repr(a) for a in self.alphas)
        if self.kind is ArchKind.DENSENET and self.alpha is not None:
            return repr(self.alpha)
        return ""

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "kind": self.kind.value,
            "input_dim": self.input_dim,
            "depth": self.depth,
            "width": self.width,
            "branch_depth": self.branch_depth,
        }
        if self.kind is ArchKind.RESNET:
            data["alphas"] = list(self.alphas)
        elif self.kind is ArchKind.DENSENET:
            data["alphas"] = self.alpha
        if self.reduction is not None:
            data["reduction"] = self.reduction.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ArchitectureSpec":
        """Lee el objeto JSON {kind, input_dim, depth, width, branch_depth, alphas, reduction}"""
        try:
            kind = ArchKind(str(data["kind"]).lower())
        except (KeyError, ValueError) as exc:
            raise InvalidSpec("kind", f"tipo de arquitectura desconocido: {data.get('kind')}") from exc
        raw_alphas = data.get("alphas")
        alphas: Tuple[float, ...] = ()
        alpha: Optional[float] = None
        if isinstance(raw_alphas, (list, tuple)):
            alphas = tuple(float(a) for a in raw_alphas)
        elif raw_alphas is not None:
            alpha = float(raw_alphas)
        reduction = data.get("reduction")
        spec = cls(
            kind=kind,
            input_dim=int(data.get("input_dim", 0)),
            depth=int(data.get("depth", 0)),
            width=int(data.get("width", 0)),
            branch_depth=int(data.get("branch_depth", 2)),
            alphas=alphas,
            alpha=alpha,
            reduction=WeightIndex.from_dict(reduction) if reduction else None,
        )
        return build_arch(spec)

    @classmethod
    def vanilla(cls, input_dim: int, depth: int, width: int) -> "ArchitectureSpec":
        return build_arch(cls(ArchKind.VANILLA, input_dim, depth, width))

    @classmethod
    def resnet(
        cls,
        input_dim: int,
        depth: int,
        width: int,
        alphas: Optional[Tuple[float, ...]] = None,
        branch_depth: int = 2,
        alpha_scale: float = 0.1,
    ) -> "ArchitectureSpec":
        """ResNet; sin alphas explícitos usa α_l = alpha_scale / L"""
        if alphas is None:
            alphas = tuple([alpha_scale / depth] * depth) if depth > 0 else ()
        return build_arch(
            cls(ArchKind.RESNET, input_dim, depth, width, branch_depth, tuple(alphas))
        )

    @classmethod
    def densenet(cls, input_dim: int, depth: int, width: int, alpha: float = 0.5) -> "ArchitectureSpec":
        return build_arch(cls(ArchKind.DENSENET, input_dim, depth, width, alpha=alpha))


def build_arch(spec: ArchitectureSpec) -> ArchitectureSpec:
    """Valida todos los invariantes y devuelve la especificación normalizada"""
    kind = spec.kind if isinstance(spec.kind, ArchKind) else ArchKind(str(spec.kind).lower())
    for name in ("input_dim", "width"):
        if int(getattr(spec, name)) < 1:
            raise InvalidSpec(name, f"debe ser >= 1, recibido {getattr(spec, name)}")
    min_depth = 0 if kind is ArchKind.VANILLA else 1
    if int(spec.depth) < min_depth:
        raise InvalidSpec("depth", f"debe ser >= {min_depth}, recibido {spec.depth}")

    alphas: Tuple[float, ...] = ()
    alpha: Optional[float] = None
    branch_depth = int(spec.branch_depth)
    if kind is ArchKind.RESNET:
        if branch_depth < 2:
            raise InvalidSpec("branch_depth", f"ResNet requiere m >= 2, recibido {branch_depth}")
        alphas = tuple(float(a) for a in spec.alphas)
        if len(alphas) != int(spec.depth):
            raise InvalidSpec("alphas", f"se esperaban {spec.depth} coeficientes, recibidos {len(alphas)}")
        for position, value in enumerate(alphas, start=1):
            if not math.isfinite(value) or value <= 0:
                raise InvalidSpec("alphas", f"α_{position} debe ser positivo, recibido {value}")
    elif kind is ArchKind.DENSENET:
        if spec.alpha is None and len(spec.alphas) == 1:
            alpha = float(spec.alphas[0])
        elif spec.alpha is not None:
            alpha = float(spec.alpha)
        if alpha is None or not math.isfinite(alpha) or alpha <= 0:
            raise InvalidSpec("alpha", f"DenseNet requiere α > 0, recibido {alpha}")

    normalized = ArchitectureSpec(
        kind=kind,
        input_dim=int(spec.input_dim),
        depth=int(spec.depth),
        width=int(spec.width),
        branch_depth=branch_depth if kind is ArchKind.RESNET else 2,
        alphas=alphas,
        alpha=alpha,
    )
    if spec.reduction is not None:
        return reduce(normalized, spec.reduction)
    return normalized


def validate_index(spec: ArchitectureSpec, k: WeightIndex) -> WeightIndex:
    """Comprueba que k existe en la arquitectura y devuelve su forma canónica"""
    if k.is_projection:
        return WeightIndex(0, 0, k.role)
    L = spec.depth
    if not 1 <= k.layer <= L:
        raise InvalidIndex(f"{k.label}: la capa debe estar en [1, {L}]")
    if spec.kind is ArchKind.VANILLA:
        return WeightIndex(k.layer, 0)
    if spec.kind is ArchKind.RESNET:
        if not 1 <= k.sublayer <= spec.branch_depth:
            raise InvalidIndex(f"{k.label}: la subcapa debe estar en [1, {spec.branch_depth}]")
        return k
    if not 0 <= k.sublayer < k.layer:
        raise InvalidIndex(f"{k.label}: la subcapa debe estar en [0, {k.layer - 1}]")
    return k


def body_keys(spec: ArchitectureSpec) -> List[WeightIndex]:
    """Claves del cuerpo en orden canónico"""
    L = spec.depth
    if spec.kind is ArchKind.VANILLA:
        return [WeightIndex(l, 0) for l in range(1, L + 1)]
    if spec.kind is ArchKind.RESNET:
        return [WeightIndex(l, h) for l in range(1, L + 1) for h in range(1, spec.branch_depth + 1)]
    return [WeightIndex(l, h) for l in range(1, L + 1) for h in range(l)]


def weight_keys(spec: ArchitectureSpec) -> List[WeightIndex]:
    return [WeightIndex.initial()] + body_keys(spec) + [WeightIndex.final()]


def weight_shape(spec: ArchitectureSpec, k: WeightIndex) -> Tuple[int, int]:
    if k.role is WeightRole.INITIAL:
        return (spec.width, spec.input_dim)
    if k.role is WeightRole.FINAL:
        return (1, spec.width)
    return (spec.width, spec.width)


def weight_scale(spec: ArchitectureSpec, k: WeightIndex) -> float:
    """Factor escalar que multiplica a W^k en el forward"""
    if k.role is WeightRole.INITIAL:
        return 1.0 / math.sqrt(spec.input_dim)
    if spec.kind is ArchKind.DENSENET and k.role is WeightRole.BODY:
        return math.sqrt(spec.alpha / (spec.width * k.layer))
    return 1.0 / math.sqrt(spec.width)


def parameter_count(spec: ArchitectureSpec) -> int:
    total = 0
    for k in weight_keys(spec):
        rows, cols = weight_shape(spec, k)
        total += rows * cols
    return total


def reduce(spec: ArchitectureSpec, k: WeightIndex) -> ArchitectureSpec:
    """
    Red reducida f_(k): elimina las conexiones que rodean a W^k.

    Vanilla y las proyecciones no cambian (todos los caminos pasan por ellas).
    ResNet pierde el skip del bloque l_k. DenseNet conecta la capa l_k solo
    con q^{h_k} y las capas posteriores solo suman h >= l_k.
    """
    k = validate_index(spec, k)
    base = replace(spec, reduction=None)
    if spec.kind is ArchKind.VANILLA or k.is_projection:
        return base
    return replace(base, reduction=k)


def dense_inputs(spec: ArchitectureSpec, layer: int) -> Optional[List[int]]:
    """Entradas h de la capa DenseNet `layer`; None si la capa queda podada"""
    k = spec.reduction
    if k is None:
        return list(range(layer))
    if layer <= k.sublayer:
        return list(range(layer))
    if layer < k.layer:
        return None
    if layer == k.layer:
        return [k.sublayer]
    return list(range(k.layer, layer))


@dataclass(frozen=True)
class WeightSet:
    """Pesos de una red (o de un batch de draws si hay ejes delanteros)"""
    initial: np.ndarray
    body: Mapping[WeightIndex, np.ndarray]
    final: np.ndarray

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return tuple(self.initial.shape[:-2])

    def get(self, k: WeightIndex) -> np.ndarray:
        if k.role is WeightRole.INITIAL:
            return self.initial
        if k.role is WeightRole.FINAL:
            return self.final
        try:
            return self.body[k]
        except KeyError as exc:
            raise InvalidIndex(f"{k.label} no existe en este WeightSet") from exc

    def items(self) -> Iterator[Tuple[WeightIndex, np.ndarray]]:
        yield WeightIndex.initial(), self.initial
        for key in sorted(self.body, key=WeightIndex.sort_key):
            yield key, self.body[key]
        yield WeightIndex.final(), self.final

    def with_matrix(self, k: WeightIndex, value: np.ndarray) -> "WeightSet":
        """Copia con la matriz k sustituida"""
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.get(k).shape:
            raise ShapeMismatch(f"{k.label}: forma {value.shape} != {self.get(k).shape}")
        if k.role is WeightRole.INITIAL:
            return WeightSet(value, self.body, self.final)
        if k.role is WeightRole.FINAL:
            return WeightSet(self.initial, self.body, value)
        body = dict(self.body)
        body[k] = value
        return WeightSet(self.initial, body, self.final)

    def draw(self, index: int) -> "WeightSet":
        """Extrae un draw de un WeightSet con eje de batch"""
        return WeightSet(
            self.initial[index],
            {key: value[index] for key, value in self.body.items()},
            self.final[index],
        )


def _draw_weights(spec: ArchitectureSpec, generator: np.random.Generator, prefix: Tuple[int, ...]) -> WeightSet:
    initial = generator.standard_normal(prefix + weight_shape(spec, WeightIndex.initial()))
    body = {key: generator.standard_normal(prefix + weight_shape(spec, key)) for key in body_keys(spec)}
    final = generator.standard_normal(prefix + weight_shape(spec, WeightIndex.final()))
    return WeightSet(initial, body, final)


def sample_weights(spec: ArchitectureSpec, rng: RngStream) -> WeightSet:
    """Un draw de pesos N(0, 1) i.i.d., determinista en rng"""
    return _draw_weights(spec, rng.generator(), ())


def sample_weight_batch(spec: ArchitectureSpec, generator: np.random.Generator, count: int) -> WeightSet:
    """`count` draws independientes apilados en el eje 0"""
    return _draw_weights(spec, generator, (int(count),))


def check_weights(spec: ArchitectureSpec, w: WeightSet) -> None:
    batch = w.batch_shape
    for key in weight_keys(spec):
        expected = batch + weight_shape(spec, key)
        actual = w.get(key).shape
        if actual != expected:
            raise ShapeMismatch(f"{key.label}: forma {actual}, se esperaba {expected}")


@dataclass(frozen=True)
class ForwardTrace:
    """Todas las cantidades intermedias de un forward"""
    spec: ArchitectureSpec
    inputs: np.ndarray
    block_outputs: List[Optional[np.ndarray]]
    preacts: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    activations: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    masks: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    outputs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    single_input: bool = True

    @property
    def output(self):
        """f(x; w): escalar para un único draw y una única entrada"""
        values = self.outputs[..., 0] if self.single_input else self.outputs
        if np.ndim(values) == 0:
            return float(values)
        return values

    @property
    def final_hidden(self) -> np.ndarray:
        return self.block_outputs[-1]


def _linear(a: np.ndarray, W: np.ndarray, scale: float) -> np.ndarray:
    return scale * (a @ np.swapaxes(W, -1, -2))


def _relu(pre: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mask = pre > 0
    return ACT_GAIN * pre * mask, mask


def prepare_inputs(spec: ArchitectureSpec, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Normaliza la entrada a forma (P, n0) y valida dimensión y norma"""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[-1] != spec.input_dim:
        raise ShapeMismatch(f"entrada de forma {np.shape(x)}, input_dim = {spec.input_dim}")
    if np.any(np.linalg.norm(X, axis=-1) == 0):
        raise ZeroInput("la entrada tiene norma cero")
    return X, single


def forward(spec: ArchitectureSpec, w: WeightSet, x: np.ndarray) -> ForwardTrace:
    """Forward exacto con las escalas de inicialización; registra la traza"""
    X, single = prepare_inputs(spec, x)
    check_weights(spec, w)
    n = spec.width
    inv_n = 1.0 / math.sqrt(n)
    y0 = _linear(X, w.initial, 1.0 / math.sqrt(spec.input_dim))
    outputs: List[Optional[np.ndarray]] = [y0]
    preacts: Dict[Tuple[int, int], np.ndarray] = {}
    activations: Dict[Tuple[int, int], np.ndarray] = {}
    masks: Dict[Tuple[int, int], np.ndarray] = {}

    if spec.kind is ArchKind.VANILLA:
        y = y0
        for l in range(1, spec.depth + 1):
            u = _linear(y, w.body[WeightIndex(l, 0)], inv_n)
            y, mask = _relu(u)
            preacts[(l, 0)] = u
            masks[(l, 0)] = mask
            activations[(l, 0)] = y
            outputs.append(y)

    elif spec.kind is ArchKind.RESNET:
        skipless = spec.reduction.layer if spec.reduction is not None else None
        y = y0
        for l in range(1, spec.depth + 1):
            b = _linear(y, w.body[WeightIndex(l, 1)], inv_n)
            preacts[(l, 1)] = b
            for h in range(2, spec.branch_depth + 1):
                q, mask = _relu(b)
                masks[(l, h - 1)] = mask
                activations[(l, h - 1)] = q
                b = _linear(q, w.body[WeightIndex(l, h)], inv_n)
                preacts[(l, h)] = b
            branch = math.sqrt(spec.alphas[l - 1]) * b
            y = branch if l == skipless else y + branch
            outputs.append(y)

    else:
        q0, mask0 = _relu(y0)
        masks[(0, 0)] = mask0
        activations[(0, 0)] = q0
        for l in range(1, spec.depth + 1):
            inputs = dense_inputs(spec, l)
            if inputs is None:
                outputs.append(None)
                continue
            total = sum(_linear(activations[(h, 0)], w.body[WeightIndex(l, h)], 1.0) for h in inputs)
            y = math.sqrt(spec.alpha / (n * l)) * total
            outputs.append(y)
            if l < spec.depth:
                q, mask = _relu(y)
                masks[(l, 0)] = mask
                activations[(l, 0)] = q

    f = _linear(outputs[-1], w.final, inv_n)[..., 0]
    return ForwardTrace(
        spec=spec,
        inputs=X,
        block_outputs=outputs,
        preacts=preacts,
        activations=activations,
        masks=masks,
        outputs=f,
        single_input=single,
    )
