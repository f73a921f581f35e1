"""Compact JWS/JWT codec for exactly two algorithms: HS256 and EdDSA
(Ed25519). Kept in-tree so verification failures map one-to-one onto the
guard error taxonomy and so the insecure baseline can skip signature
checks without monkeypatching a third-party library.

Verification is deny-by-default: unknown algorithms (including "none"),
unknown key ids, and missing required claims all reject.
"""

from __future__ import annotations

import base64
import binascii
import hmac
import json
import hashlib
from dataclasses import dataclass
from typing import Any, Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import (
    BadSignature,
    MalformedToken,
    TokenExpired,
    TokenNotYetValid,
    WrongAudience,
    WrongIssuer,
)

__all__ = ["JwtKey", "mint_token", "decode_token", "peek_claims"]

REQUIRED_CLAIMS = ("iss", "sub", "aud", "exp")


@dataclass(frozen=True)
class JwtKey:
    """Verification (and optionally signing) material for one key id."""

    kid: str
    algorithm: str  # "HS256" or "EdDSA"
    secret: Optional[bytes] = None  # HS256
    public_key: Optional[Ed25519PublicKey] = None  # EdDSA verify
    private_key: Optional[Ed25519PrivateKey] = None  # EdDSA sign


def _b64url_encode(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def _b64url_decode(text: str) -> bytes:
    padded = text + "=" * (-len(text) % 4)
    try:
        return base64.urlsafe_b64decode(padded.encode("ascii"))
    except (binascii.Error, ValueError, UnicodeEncodeError):
        raise MalformedToken("segment is not base64url") from None


def mint_token(claims: dict[str, Any], key: JwtKey) -> str:
    """Serialize and sign a token. Claims are passed through untouched, so
    tests can mint deliberately broken tokens (missing claims, wrong
    issuer) and the verifier remains the only place with opinions."""
    header = {"alg": key.algorithm, "typ": "JWT", "kid": key.kid}
    signing_input = (
        _b64url_encode(json.dumps(header, separators=(",", ":")).encode())
        + "."
        + _b64url_encode(json.dumps(claims, separators=(",", ":")).encode())
    ).encode("ascii")
    if key.algorithm == "HS256":
        if key.secret is None:
            raise ValueError("HS256 minting needs a secret")
        signature = hmac.new(key.secret, signing_input, hashlib.sha256).digest()
    elif key.algorithm == "EdDSA":
        if key.private_key is None:
            raise ValueError("EdDSA minting needs a private key")
        signature = key.private_key.sign(signing_input)
    else:
        raise ValueError(f"unsupported algorithm {key.algorithm!r}")
    return signing_input.decode("ascii") + "." + _b64url_encode(signature)


def _split(token: str) -> tuple[str, str, str]:
    parts = token.split(".")
    if len(parts) != 3:
        raise MalformedToken("token must have three segments")
    return parts[0], parts[1], parts[2]


def _decode_json_segment(segment: str, what: str) -> dict[str, Any]:
    try:
        doc = json.loads(_b64url_decode(segment))
    except (ValueError, UnicodeDecodeError):
        raise MalformedToken(f"{what} is not valid JSON") from None
    if not isinstance(doc, dict):
        raise MalformedToken(f"{what} must be a JSON object")
    return doc


def peek_claims(token: str) -> dict[str, Any]:
    """Claims without verification. Only for diagnostics and error paths;
    never make a decision on these."""
    _, claims_seg, _ = _split(token)
    return _decode_json_segment(claims_seg, "claims")


def _check_signature(
    header: dict[str, Any], signing_input: bytes, signature: bytes, keys: dict[str, JwtKey]
) -> JwtKey:
    alg = header.get("alg")
    kid = header.get("kid")
    if not isinstance(kid, str) or kid not in keys:
        raise BadSignature(f"unknown key id {kid!r}")
    key = keys[kid]
    # "none" and any algorithm other than the key's own are rejected
    # outright; accepting the token's word for the algorithm is the
    # classic downgrade hole.
    if alg != key.algorithm:
        raise BadSignature(f"algorithm {alg!r} not allowed for key {kid!r}")
    if key.algorithm == "HS256":
        if key.secret is None:
            raise BadSignature(f"key {kid!r} has no HS256 secret")
        expected = hmac.new(key.secret, signing_input, hashlib.sha256).digest()
        if not hmac.compare_digest(expected, signature):
            raise BadSignature("HS256 signature mismatch")
    elif key.algorithm == "EdDSA":
        if key.public_key is None:
            raise BadSignature(f"key {kid!r} has no public key")
        try:
            key.public_key.verify(signature, signing_input)
        except InvalidSignature:
            raise BadSignature("EdDSA signature mismatch") from None
    else:
        raise BadSignature(f"key {kid!r} has unsupported algorithm")
    return key


def decode_token(
    token: str,
    *,
    issuer: str,
    audience: str,
    keys: dict[str, JwtKey],
    now: float,
    leeway: float = 0.0,
    skip_signature_check: bool = False,
) -> dict[str, Any]:
    """Verify and decode. Check order: shape, signature, required claims,
    issuer, audience, exp, nbf. ``skip_signature_check`` exists solely for
    the insecure baseline configuration of the adversarial harness.
    """
    header_seg, claims_seg, sig_seg = _split(token)
    header = _decode_json_segment(header_seg, "header")
    claims = _decode_json_segment(claims_seg, "claims")
    signature = _b64url_decode(sig_seg)
    signing_input = (header_seg + "." + claims_seg).encode("ascii")

    if not skip_signature_check:
        _check_signature(header, signing_input, signature, keys)

    for name in REQUIRED_CLAIMS:
        if name not in claims:
            raise MalformedToken(f"missing required claim {name!r}")

    if claims["iss"] != issuer:
        raise WrongIssuer(f"issuer {claims['iss']!r} is not {issuer!r}")

    aud: Union[str, list[Any], Any] = claims["aud"]
    if isinstance(aud, str):
        aud_ok = aud == audience
    elif isinstance(aud, list):
        aud_ok = audience in aud
    else:
        aud_ok = False
    if not aud_ok:
        raise WrongAudience(f"audience {aud!r} does not include {audience!r}")

    exp = claims["exp"]
    if not isinstance(exp, (int, float)) or isinstance(exp, bool):
        raise MalformedToken("exp must be numeric")
    if now > exp + leeway:
        raise TokenExpired(f"token expired at {exp}")

    nbf = claims.get("nbf")
    if nbf is not None:
        if not isinstance(nbf, (int, float)) or isinstance(nbf, bool):
            raise MalformedToken("nbf must be numeric")
        if now < nbf - leeway:
            raise TokenNotYetValid(f"token not valid before {nbf}")

    return claims
