// minixml: documents, elements and plain or namespaced attributes.
//
// Planted bug: setAttrNodeNS on an element that already carries a plain
// attribute with the same local name dereferences the plain attribute's
// (absent) namespace URI.
//
// Define MINIXML_MISUSE_MODEL to drop the argument checks, so that API
// misuse crashes instead of returning MX_ERR.
#ifndef MINIXML_H
#define MINIXML_H

#include <cstring>
#include <string>
#include <vector>

enum { MX_OK = 0, MX_ERR = 1 };

// Nothing is ever freed, so leak reports are noise.
extern "C" const char *__asan_default_options() { return "detect_leaks=0"; }

struct Doc {
  int live;
};

struct Attr {
  Doc *owner;
  std::string name;
  const char *ns_uri;  // null for plain attributes
  std::string uri_storage;
  void *parent;
};

struct Elem {
  Doc *owner;
  std::string tag;
  std::vector<Attr *> attrs;
};

inline Doc *createDocument() { return new Doc{1}; }

inline Elem *createElement(Doc *doc, const std::string &tag) {
#ifndef MINIXML_MISUSE_MODEL
  if (!doc || !doc->live) return nullptr;
#endif
  if (tag.empty()) return nullptr;
  return new Elem{doc, tag, {}};
}

inline Attr *createAttr(Doc *doc, const std::string &name) {
#ifndef MINIXML_MISUSE_MODEL
  if (!doc || !doc->live) return nullptr;
#endif
  if (name.empty()) return nullptr;
  return new Attr{doc, name, nullptr, std::string(), nullptr};
}

inline Attr *createAttrNS(Doc *doc, const std::string &uri, const std::string &qname) {
#ifndef MINIXML_MISUSE_MODEL
  if (!doc || !doc->live) return nullptr;
#endif
  size_t colon = qname.rfind(':');
  std::string local = colon == std::string::npos ? qname : qname.substr(colon + 1);
  if (uri.empty() || local.empty()) return nullptr;
  Attr *a = new Attr{doc, local, nullptr, uri, nullptr};
  a->ns_uri = a->uri_storage.c_str();
  return a;
}

inline int setAttrNode(Elem *el, Attr *attr) {
#ifndef MINIXML_MISUSE_MODEL
  if (!el || !attr || attr->ns_uri || attr->owner != el->owner) return MX_ERR;
#endif
  attr->parent = el;
  el->attrs.push_back(attr);
  return MX_OK;
}

inline int setAttrNodeNS(Elem *el, Attr *attr) {
#ifndef MINIXML_MISUSE_MODEL
  if (!el || !attr || !attr->ns_uri || attr->owner != el->owner) return MX_ERR;
#endif
  attr->uri_storage = attr->ns_uri;
  attr->ns_uri = attr->uri_storage.c_str();
  for (Attr *old : el->attrs) {
    if (old->name == attr->name) {
      // BUG: plain attributes have no namespace URI
      if (std::strcmp(old->ns_uri, attr->ns_uri) == 0) {
        old->parent = nullptr;
      }
    }
  }
  attr->parent = el;
  el->attrs.push_back(attr);
  return MX_OK;
}

#endif
