"""Generic HTTP tag-source client.

Stands in for a search-engine annotation scrape: given an endpoint template
and a list of image ids, it pulls JSON tag lists and writes the tag-document
ingest format. Raw responses are cached on disk so interrupted batches resume
without re-fetching; requests are rate limited and retried with backoff.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

CACHE_ENV_VAR = "CCFEAT_CACHE"


class FetchError(RuntimeError):
    pass


@dataclass
class FetchSummary:
    written: int
    from_cache: int
    failures: list[tuple[str, str]] = field(default_factory=list)


def _cache_dir(explicit: str | Path | None) -> Path | None:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV_VAR)
    return Path(env) / "tag-responses" if env else None


def _build_url(endpoint: str, image_id: str) -> str:
    if "{image_id}" in endpoint:
        return endpoint.format(image_id=image_id)
    sep = "&" if "?" in endpoint else "?"
    return f"{endpoint}{sep}image_id={image_id}"


def _parse_tags(payload) -> list[str]:
    if isinstance(payload, dict):
        payload = payload.get("tags")
    if not isinstance(payload, list) or not all(isinstance(t, str) for t in payload):
        raise FetchError("response is not a tag list (expected [...] or {\"tags\": [...]})")
    return payload


def fetch_tags(endpoint: str, image_ids: list[str], out_path: str | Path, *,
               cache_dir: str | Path | None = None, rate_limit_s: float = 0.0,
               retries: int = 3, timeout: float = 10.0,
               session: requests.Session | None = None) -> FetchSummary:
    """Fetch tag lists for every image id and write the JSONL ingest file.

    The endpoint either contains an ``{image_id}`` placeholder or gets it
    appended as a query parameter. Per-id failures are collected, not fatal.
    """
    sess = session or requests.Session()
    cache = _cache_dir(cache_dir)
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    summary = FetchSummary(written=0, from_cache=0)
    last_request = 0.0
    with open(out_path, "w", encoding="utf-8") as out:
        for image_id in image_ids:
            url = _build_url(endpoint, image_id)
            cache_file = (cache / (hashlib.sha256(url.encode()).hexdigest() + ".json")
                          if cache is not None else None)
            body = None
            if cache_file is not None and cache_file.exists():
                body = cache_file.read_text(encoding="utf-8")
                summary.from_cache += 1
            else:
                err = None
                for attempt in range(retries):
                    wait = rate_limit_s - (time.monotonic() - last_request)
                    if wait > 0:
                        time.sleep(wait)
                    try:
                        last_request = time.monotonic()
                        resp = sess.get(url, timeout=timeout)
                        if resp.status_code >= 500:
                            err = f"HTTP {resp.status_code}"
                            time.sleep(0.2 * 2 ** attempt)
                            continue
                        if resp.status_code != 200:
                            err = f"HTTP {resp.status_code}"
                            break
                        body = resp.text
                        err = None
                        break
                    except requests.RequestException as e:
                        err = str(e)
                        time.sleep(0.2 * 2 ** attempt)
                if body is None:
                    summary.failures.append((image_id, err or "no response"))
                    continue
                if cache_file is not None:
                    cache_file.write_text(body, encoding="utf-8")
            try:
                tags = _parse_tags(json.loads(body))
            except (json.JSONDecodeError, FetchError) as e:
                summary.failures.append((image_id, f"bad payload: {e}"))
                continue
            out.write(json.dumps({"image_id": image_id, "tags": tags},
                                 sort_keys=True) + "\n")
            summary.written += 1
    return summary
