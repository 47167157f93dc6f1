"""Hardened XML parsing and the canonical serialization shared with the mock IdP.

Canonical form (profile ``urn:authshim:c14n:1``):

* UTF-8, no XML declaration, no self-closing tags.
* Attributes sorted by (namespace URI, local name); ``xmlns`` attributes are
  never rendered as attributes.
* Namespace declarations are emitted on the first element that needs them
  (relative to the rendered subtree), sorted by prefix.
* Whitespace-only text between elements is dropped; every other text node is
  kept exactly.
* Comments and processing instructions are dropped.
* ``ds:Signature`` elements are excluded at any depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.dom import Node
from xml.dom.minidom import Document, Element
from xml.parsers.expat import ExpatError

import defusedxml
import defusedxml.minidom

from .errors import DocumentTooLarge, DtdForbidden, StructureInvalid, XmlMalformed

SAMLP_NS = "urn:oasis:names:tc:SAML:2.0:protocol"
SAML_NS = "urn:oasis:names:tc:SAML:2.0:assertion"
DSIG_NS = "http://www.w3.org/2000/09/xmldsig#"
XMLNS_NS = "http://www.w3.org/2000/xmlns/"
XML_NS = "http://www.w3.org/XML/1998/namespace"

C14N_ALGORITHM = "urn:authshim:c14n:1"


@dataclass(frozen=True)
class ParserPolicy:
    allow_dtd: bool = False
    allow_external_entities: bool = False
    max_document_bytes: int = 1_048_576
    max_element_depth: int = 64

    def __post_init__(self):
        if self.allow_dtd or self.allow_external_entities:
            raise ValueError("DTDs and external entities cannot be enabled")
        if self.max_document_bytes <= 0 or self.max_element_depth <= 0:
            raise ValueError("parser limits must be positive")


DEFAULT_POLICY = ParserPolicy()


@dataclass(frozen=True)
class ResponseDocument:
    document: Document
    response: Element
    assertion: Element


def parse_xml(raw: bytes, policy: ParserPolicy = DEFAULT_POLICY) -> Document:
    """Parse ``raw`` with DTDs, entities and external references forbidden.

    The size limit and the DOCTYPE scan run before the parser sees a byte, so
    an entity declaration is never resolved.
    """
    if isinstance(raw, str):
        raw = raw.encode("utf-8")
    if len(raw) > policy.max_document_bytes:
        raise DocumentTooLarge("%d bytes exceeds limit of %d" % (len(raw), policy.max_document_bytes))
    if b"<!DOCTYPE" in raw or b"<!ENTITY" in raw:
        raise DtdForbidden("document type declaration present")
    try:
        document = defusedxml.minidom.parseString(
            raw, forbid_dtd=True, forbid_entities=True, forbid_external=True
        )
    except defusedxml.DTDForbidden as exc:
        raise DtdForbidden(str(exc)) from None
    except (defusedxml.EntitiesForbidden, defusedxml.ExternalReferenceForbidden) as exc:
        raise DtdForbidden(str(exc)) from None
    except (ExpatError, ValueError, UnicodeError) as exc:
        raise XmlMalformed(str(exc)) from None
    if document.doctype is not None:
        raise DtdForbidden("document type declaration present")
    _check_depth(document.documentElement, policy.max_element_depth)
    return document


def _check_depth(root: Element, limit: int) -> None:
    stack = [(root, 1)]
    while stack:
        node, depth = stack.pop()
        if depth > limit:
            raise StructureInvalid("element depth exceeds %d" % limit)
        for child in node.childNodes:
            if child.nodeType == Node.ELEMENT_NODE:
                stack.append((child, depth + 1))


def child_elements(parent: Element, ns: str | None = None, local: str | None = None) -> list[Element]:
    return [
        child
        for child in parent.childNodes
        if child.nodeType == Node.ELEMENT_NODE
        and (ns is None or child.namespaceURI == ns)
        and (local is None or child.localName == local)
    ]


def first_child(parent: Element, ns: str, local: str) -> Element | None:
    found = child_elements(parent, ns, local)
    return found[0] if found else None


def text_of(element: Element) -> str:
    return "".join(
        child.data
        for child in element.childNodes
        if child.nodeType in (Node.TEXT_NODE, Node.CDATA_SECTION_NODE)
    )


def parse_response(raw: bytes, policy: ParserPolicy = DEFAULT_POLICY) -> ResponseDocument:
    document = parse_xml(raw, policy)
    root = document.documentElement
    if root.namespaceURI != SAMLP_NS or root.localName != "Response":
        raise StructureInvalid("root element is not samlp:Response")
    # Counting document-wide defeats assertions smuggled into extensions.
    if document.getElementsByTagNameNS(SAML_NS, "EncryptedAssertion").length:
        raise StructureInvalid("encrypted assertions are not supported")
    everywhere = document.getElementsByTagNameNS(SAML_NS, "Assertion")
    direct = child_elements(root, SAML_NS, "Assertion")
    if everywhere.length != 1 or len(direct) != 1:
        raise StructureInvalid("expected exactly one assertion, found %d" % everywhere.length)
    return ResponseDocument(document=document, response=root, assertion=direct[0])


def _escape_text(value: str) -> str:
    return (
        value.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace("\r", "&#xD;")
    )


def _escape_attr(value: str) -> str:
    return (
        value.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace('"', "&quot;")
        .replace("\t", "&#x9;")
        .replace("\n", "&#xA;")
        .replace("\r", "&#xD;")
    )


def _is_signature(node) -> bool:
    return (
        node.nodeType == Node.ELEMENT_NODE
        and node.namespaceURI == DSIG_NS
        and node.localName == "Signature"
    )


def _qname(prefix: str | None, local: str) -> str:
    return "%s:%s" % (prefix, local) if prefix else local


def _render(element: Element, out: list[str], inscope: dict[str, str], keep_signatures: bool) -> None:
    needed: dict[str, str] = {}
    own_prefix = element.prefix or ""
    own_uri = element.namespaceURI or ""
    if inscope.get(own_prefix, "") != own_uri:
        needed[own_prefix] = own_uri

    attrs = []
    for index in range(element.attributes.length):
        attr = element.attributes.item(index)
        if attr.namespaceURI == XMLNS_NS:
            continue
        uri = attr.namespaceURI or ""
        if uri and uri != XML_NS:
            prefix = attr.prefix or ""
            if inscope.get(prefix, "") != uri and needed.get(prefix) != uri:
                needed[prefix] = uri
        attrs.append((uri, attr.localName or attr.name, attr.prefix, attr.value))
    attrs.sort(key=lambda item: (item[0], item[1]))

    qname = _qname(element.prefix, element.localName or element.tagName)
    out.append("<" + qname)
    if needed:
        inscope = {**inscope, **needed}
        for prefix in sorted(needed):
            name = "xmlns:" + prefix if prefix else "xmlns"
            out.append(' %s="%s"' % (name, _escape_attr(needed[prefix])))
    for _uri, local, prefix, value in attrs:
        out.append(' %s="%s"' % (_qname(prefix, local), _escape_attr(value)))
    out.append(">")

    children = element.childNodes
    has_elements = any(child.nodeType == Node.ELEMENT_NODE for child in children)
    for child in children:
        kind = child.nodeType
        if kind == Node.ELEMENT_NODE:
            if not keep_signatures and _is_signature(child):
                continue
            _render(child, out, inscope, keep_signatures)
        elif kind in (Node.TEXT_NODE, Node.CDATA_SECTION_NODE):
            if has_elements and not child.data.strip(" \t\r\n"):
                continue
            out.append(_escape_text(child.data))
    out.append("</%s>" % qname)


def _root_of(node) -> Element:
    if node.nodeType == Node.DOCUMENT_NODE:
        return node.documentElement
    return node


def canonicalize(element) -> bytes:
    """Canonical bytes of ``element`` with every ``ds:Signature`` excluded."""
    out: list[str] = []
    _render(_root_of(element), out, {"": ""}, keep_signatures=False)
    return "".join(out).encode("utf-8")


def serialize(element) -> bytes:
    """Same rendering as :func:`canonicalize` but signatures are kept.

    Used to put documents on the wire, so the signed region of an assertion
    appears byte-for-byte as its canonical form.
    """
    out: list[str] = []
    _render(_root_of(element), out, {"": ""}, keep_signatures=True)
    return "".join(out).encode("utf-8")
